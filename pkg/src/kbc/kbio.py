"""Knowledge-base persistence: manifest, weights file, save/load round trip.

A KB directory holds a JSON manifest, a copy of the rule file, and (after
learning) a weights TSV. The manifest pins SHA-256 hashes of the rule file,
the weights file, and every referenced data file; grounding is deterministic,
so the factor graphs themselves are reconstructed on load and the manifest's
statistics are verified against a recount.

Weights are persisted as sorted, human-diffable TSV lines:

    rule_id <TAB> ["term", ...] <TAB> repr(weight)

repr round-trips IEEE doubles exactly, so save/load is bit-stable.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .datastore import SCHEMA_FILENAME, Database, load_data_dir
from .errors import HashMismatch, SchemaError, VersionMismatch
from .grounder import (
    FactorGraph,
    WeightKey,
    WeightStore,
    factor_count_report,
    ground,
)
from .predicates import build_registry
from .rulelang import RuleAst, parse_rule_file

FORMAT_VERSION = "1.0"
TOOL_VERSION = "0.1.0"

MANIFEST_NAME = "manifest.json"
RULES_NAME = "rules.kbr"
WEIGHTS_NAME = "weights.tsv"
GRAPH_INDEX_NAME = "graphs.tsv"
WEIGHT_KEYS_NAME = "weight_keys.tsv"


@dataclass(slots=True)
class KnowledgeBase:
    db: Database
    rules: list[RuleAst]
    registry: dict
    graphs: list[FactorGraph]
    weights: WeightStore
    _by_sample: dict = field(default=None, repr=False)

    def graph_for(self, sample_id: int) -> FactorGraph | None:
        if self._by_sample is None:
            self._by_sample = {g.sample_id: g for g in self.graphs}
        return self._by_sample.get(sample_id)

    @property
    def sample_ids(self) -> list[int]:
        return [g.sample_id for g in self.graphs]


def build_kb(
    data_dir: str | Path,
    rules_path: str | Path,
    factor_cap: int | None = None,
) -> tuple[KnowledgeBase, dict]:
    """Load data, parse rules, ground. Returns the KB and its stats."""
    db = load_data_dir(data_dir)
    rules = parse_rule_file(Path(rules_path).read_text(encoding="utf-8"))
    registry = build_registry(db)
    kwargs = {} if factor_cap is None else {"factor_cap": factor_cap}
    graphs, weights = ground(rules, db, registry=registry, **kwargs)
    stats = factor_count_report(rules, db, registry=registry, **kwargs)
    kb = KnowledgeBase(
        db=db, rules=rules, registry=registry, graphs=graphs, weights=weights
    )
    return kb, stats


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def save_weights(store: WeightStore, path: str | Path) -> None:
    lines = []
    for key, value in store.items_sorted():
        lines.append(f"{key.rule_id}\t{json.dumps(list(key.terms))}\t{value!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_weights(path: str | Path) -> WeightStore:
    items = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rule_id, terms_json, value = line.split("\t")
            key = WeightKey(rule_id=int(rule_id), terms=tuple(json.loads(terms_json)))
            items.append((key, float(value)))
        except (ValueError, json.JSONDecodeError):
            raise SchemaError(f"{path} line {lineno}: malformed weights line") from None
    return WeightStore.from_items(items)


def save_kb(
    kb_dir: str | Path,
    data_dir: str | Path,
    rules_path: str | Path,
    stats: dict,
    kb: KnowledgeBase | None = None,
    weights: WeightStore | None = None,
    seed: int | None = None,
) -> dict:
    """Write the KB directory; returns the manifest dict.

    With a grounded ``kb``, also writes the graph index (per-sample variable
    and factor counts) and the weight-key table.
    """
    kb_dir = Path(kb_dir)
    kb_dir.mkdir(parents=True, exist_ok=True)
    data_dir = Path(data_dir).resolve()
    rules_text = Path(rules_path).read_text(encoding="utf-8")
    (kb_dir / RULES_NAME).write_text(rules_text, encoding="utf-8")
    if kb is not None:
        lines = ["sample_id\tn_variables\tn_factors"]
        for g in kb.graphs:
            lines.append(f"{g.sample_id}\t{len(g.variables)}\t{len(g.factors)}")
        (kb_dir / GRAPH_INDEX_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
        key_lines = [
            f"{k.rule_id}\t{json.dumps(list(k.terms))}" for k in kb.weights.sorted_keys()
        ]
        (kb_dir / WEIGHT_KEYS_NAME).write_text(
            "\n".join(key_lines) + ("\n" if key_lines else ""), encoding="utf-8"
        )

    data_hashes = {SCHEMA_FILENAME: _sha256(data_dir / SCHEMA_FILENAME)}
    for csv_path in sorted(data_dir.glob("*.csv")):
        data_hashes[csv_path.name] = _sha256(csv_path)

    manifest = {
        "format_version": FORMAT_VERSION,
        "tool_version": TOOL_VERSION,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": seed,
        "data_dir": str(data_dir),
        "data_hashes": data_hashes,
        "rules_file": RULES_NAME,
        "rules_sha256": _sha256(kb_dir / RULES_NAME),
        "stats": dict(stats),
        "weights_file": None,
        "weights_sha256": None,
    }
    if weights is not None:
        save_weights(weights, kb_dir / WEIGHTS_NAME)
        manifest["weights_file"] = WEIGHTS_NAME
        manifest["weights_sha256"] = _sha256(kb_dir / WEIGHTS_NAME)
    (kb_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def update_kb_weights(kb_dir: str | Path, weights: WeightStore) -> None:
    """Write (or replace) the weights file and re-pin its hash."""
    kb_dir = Path(kb_dir)
    manifest = json.loads((kb_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    save_weights(weights, kb_dir / WEIGHTS_NAME)
    manifest["weights_file"] = WEIGHTS_NAME
    manifest["weights_sha256"] = _sha256(kb_dir / WEIGHTS_NAME)
    (kb_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )


def load_kb(kb_dir: str | Path, weights_path: str | Path | None = None):
    """Load and verify a KB directory; re-grounds the factor graphs.

    Raises VersionMismatch for an incompatible manifest and HashMismatch when
    any referenced file fails hash verification. ``weights_path`` overrides
    the manifest's learned weights (e.g. a weights file produced elsewhere).
    """
    kb_dir = Path(kb_dir)
    manifest_path = kb_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise SchemaError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    major = str(manifest.get("format_version", "")).split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise VersionMismatch(
            f"manifest format {manifest.get('format_version')} is not compatible "
            f"with {FORMAT_VERSION}"
        )
    rules_file = kb_dir / manifest["rules_file"]
    if _sha256(rules_file) != manifest["rules_sha256"]:
        raise HashMismatch(f"{rules_file} does not match its manifest hash")
    data_dir = Path(manifest["data_dir"])
    for name, expect in manifest["data_hashes"].items():
        actual = _sha256(data_dir / name)
        if actual != expect:
            raise HashMismatch(f"{data_dir / name} does not match its manifest hash")
    kb, stats = build_kb(data_dir, rules_file)
    if stats != manifest["stats"]:
        raise VersionMismatch(
            "grounding statistics differ from the manifest; the KB was written "
            "by an incompatible tool version"
        )
    if weights_path is None and manifest.get("weights_file"):
        weights_path = kb_dir / manifest["weights_file"]
        if _sha256(weights_path) != manifest["weights_sha256"]:
            raise HashMismatch(f"{weights_path} does not match its manifest hash")
    if weights_path is not None:
        learned = load_weights(weights_path)
        for key in kb.weights.sorted_keys():
            if key in learned:
                kb.weights[key] = learned[key]
    return kb, manifest
