"""Synthetic dataset generator with known ground-truth weights.

A synth spec fixes label families, feature dimensionality, rule texts with
per-rule weight ranges, sample count and seed:

    {
      "seed": 7,
      "samples": 1000,
      "sampling": "exact",            # or "factorized"
      "holdout_fraction": 0.0,        # fraction written with latent labels
      "families": [
        {"name": "hasAttribute", "kind": "boolean",
         "labels": ["glossy", "warm", "open"]},
        {"name": "sceneCategory", "kind": "multinomial",
         "labels": ["beach", "forest", "office"]}
      ],
      "feature_dims": 0,
      "rules": [
        {"text": "{(i,w(a),1) | hasAttribute(i,a)}", "weight_range": [-1.5, 1.5]}
      ]
    }

Generating weights are drawn per weight key from the owning rule's range.
In "exact" mode each sample's labels are drawn from the true joint
distribution by enumerating the sample's grounded graph (so recovery tests
have a real oracle); the spec is rejected when the template is too large to
enumerate. "factorized" mode draws each label independently from its bias
weight, which equals the exact distribution when the spec has no
correlation or feature rules, and is the cheap approximation used to build
large timing corpora.

Holdout samples get their labels drawn and recorded in the truth files but
written to the data tables as empty (latent) cells.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .datastore import (
    Database,
    DataTable,
    Schema,
    TableDef,
    save_data_dir,
)
from .errors import SchemaError, TooLargeToEnumerate
from .factorgraph import exact_log_partition, iter_worlds, log_weight
from .grounder import WeightStore, ground
from .kbio import save_weights
from .predicates import build_registry
from .rulelang import parse_rule_file

RULES_NAME = "rules.kbr"
TRUTH_WEIGHTS_NAME = "truth_weights.tsv"
TRUTH_LABELS_NAME = "truth_labels.csv"
META_NAME = "synth.json"

EXACT_WORLD_LIMIT = 2**20


def _family_table_def(fam: dict) -> TableDef:
    name, kind, labels = fam["name"], fam["kind"], fam["labels"]
    if kind == "boolean":
        return TableDef(
            name=name,
            columns=(("sample_id", "integer"), ("label", "text"), ("value", "boolean")),
            key_columns=("sample_id", "label"),
            role="data",
        )
    if kind == "multinomial":
        return TableDef(
            name=name,
            columns=(("sample_id", "integer"), ("value", "text")),
            key_columns=("sample_id",),
            role="data",
            domain=tuple(labels),
        )
    raise SchemaError(f"family {name}: unknown kind {kind!r}")


_FEATURE_DEF = TableDef(
    name="hasFeature",
    columns=(("sample_id", "integer"), ("dim", "integer"), ("value", "real")),
    key_columns=("sample_id", "dim"),
    role="data",
)


def _build_schema(spec: dict) -> Schema:
    tables = [_family_table_def(f) for f in spec["families"]]
    if spec.get("feature_dims", 0) > 0:
        tables.append(_FEATURE_DEF)
    return Schema(tables=tuple(tables))


def _sample_rows(spec, sample_id, labels: dict | None, features):
    """Rows for one sample. labels=None leaves every label cell empty."""
    rows = {}
    for fam in spec["families"]:
        name = fam["name"]
        if fam["kind"] == "boolean":
            rows[name] = [
                (sample_id, lab, None if labels is None else labels[(name, lab)])
                for lab in fam["labels"]
            ]
        else:
            rows[name] = [(sample_id, None if labels is None else labels[(name,)])]
    if spec.get("feature_dims", 0) > 0:
        rows["hasFeature"] = [
            (sample_id, d, float(features[d])) for d in range(spec["feature_dims"])
        ]
    return rows


def _single_sample_db(spec, schema, sample_id, labels, features) -> Database:
    rows = _sample_rows(spec, sample_id, labels, features)
    db = Database(schema=schema)
    for tdef in schema.tables:
        db.tables[tdef.name] = DataTable(tdef, rows[tdef.name])
    return db


def _draw_truth_weights(rules, keys, spec, rng) -> WeightStore:
    """Per-key truth draws.

    A rule's "weight_range" [lo, hi] draws uniform; an optional "min_abs" m
    instead draws a random sign times U(m, hi), keeping magnitudes away from
    a decision boundary. "weight_values" pins individual keys exactly,
    mapping "term1|term2|..." to the weight (for controlled fixtures).
    """
    ranges = {}
    pinned = {}
    for rule, entry in zip(rules, spec["rules"]):
        lo, hi = entry.get("weight_range", (-1.0, 1.0))
        ranges[rule.rule_id] = (float(lo), float(hi), entry.get("min_abs"))
        for terms, value in entry.get("weight_values", {}).items():
            pinned[(rule.rule_id, terms)] = float(value)
    store = WeightStore(keys=keys)
    for key in store.sorted_keys():
        pin = pinned.get((key.rule_id, "|".join(key.terms)))
        if pin is not None:
            store[key] = pin
            continue
        lo, hi, min_abs = ranges[key.rule_id]
        if min_abs is None:
            store[key] = float(rng.uniform(lo, hi))
        else:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            store[key] = float(sign * rng.uniform(min_abs, hi))
    return store


def _exact_label_draw(graph, weights, rng) -> dict:
    free = graph.free_variables()
    count = 1
    for v in free:
        count *= len(v.values())
        if count > EXACT_WORLD_LIMIT:
            raise TooLargeToEnumerate(
                "synth spec too large for exact generation; use factorized sampling"
            )
    logz = exact_log_partition(graph, weights)
    u = rng.random()
    acc = 0.0
    world = None
    for world in iter_worlds(graph):
        acc += math.exp(log_weight(graph, world, weights) - logz)
        if u < acc:
            break
    return world


def _factorized_label_draw(spec, bias_keys, weights, rng) -> dict:
    labels = {}
    for fam in spec["families"]:
        name = fam["name"]
        if fam["kind"] == "boolean":
            for lab in fam["labels"]:
                key = bias_keys.get((name, lab))
                w = weights[key] if key is not None else 0.0
                p = 1.0 / (1.0 + math.exp(-w))
                labels[(name, lab)] = bool(rng.random() < p)
        else:
            ws = []
            for lab in fam["labels"]:
                key = bias_keys.get((name, lab))
                ws.append(weights[key] if key is not None else 0.0)
            m = max(ws)
            es = [math.exp(w - m) for w in ws]
            z = sum(es)
            u = rng.random() * z
            acc = 0.0
            pick = len(es) - 1
            for i, e in enumerate(es):
                acc += e
                if u < acc:
                    pick = i
                    break
            labels[(name,)] = fam["labels"][pick]
    return labels


def _bias_key_lookup(rules, registry, keys) -> dict:
    """Map (family, label) -> bias weight key, for the factorized sampler.

    A bias rule is a single-literal rule with constant factor expression;
    its weight key terms end with the label.
    """
    out = {}
    bias_rule_family = {}
    for rule in rules:
        if len(rule.body) != 1:
            continue
        lit = rule.body[0]
        pred = registry.get(lit.predicate)
        if pred is None or not pred.is_data or pred.kind == "continuous":
            continue
        bias_rule_family[rule.rule_id] = lit.predicate
    for key in keys:
        fam = bias_rule_family.get(key.rule_id)
        if fam is not None and len(key.terms) == 1:
            out[(fam, key.terms[0])] = key
    return out


def _world_to_labels(spec, graph, world) -> dict:
    labels = {}
    for fam in spec["families"]:
        name = fam["name"]
        if fam["kind"] == "boolean":
            for lab in fam["labels"]:
                labels[(name, lab)] = world[(graph.sample_id, name, (lab,))]
        else:
            labels[(name,)] = world[(graph.sample_id, name, ())]
    return labels


def generate(spec: dict, out_dir: str | Path) -> dict:
    """Generate the dataset into out_dir; returns a summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    n_samples = int(spec["samples"])
    if n_samples < 1:
        raise SchemaError("samples must be >= 1")
    sampling = spec.get("sampling", "exact")
    if sampling not in ("exact", "factorized"):
        raise SchemaError(f"unknown sampling mode {sampling!r}")
    holdout = float(spec.get("holdout_fraction", 0.0))

    rules_text = "\n".join(entry["text"] for entry in spec["rules"]) + "\n"
    rules = parse_rule_file(rules_text)
    schema = _build_schema(spec)
    dims = int(spec.get("feature_dims", 0))

    # template grounding fixes the weight-key set
    template_feats = np.zeros(dims)
    template_db = _single_sample_db(spec, schema, 0, None, template_feats)
    registry = build_registry(template_db)
    template_graphs, template_store = ground(rules, template_db, registry=registry)
    keys = template_store.sorted_keys()
    truth = _draw_truth_weights(rules, keys, spec, rng)
    bias_keys = _bias_key_lookup(rules, registry, keys)

    if "holdout_ids" in spec:
        holdout_ids = {int(s) for s in spec["holdout_ids"]}
    else:
        n_holdout = int(round(n_samples * holdout))
        holdout_ids = set(range(n_samples - n_holdout, n_samples))

    all_rows: dict[str, list] = {t.name: [] for t in schema.tables}
    truth_labels = []
    for s in range(n_samples):
        features = rng.standard_normal(dims) if dims else np.zeros(0)
        if sampling == "exact":
            db_s = _single_sample_db(spec, schema, s, None, features)
            graphs_s, _ = ground(rules, db_s, registry=build_registry(db_s))
            world = _exact_label_draw(graphs_s[0], truth, rng)
            labels = _world_to_labels(spec, graphs_s[0], world)
        else:
            labels = _factorized_label_draw(spec, bias_keys, truth, rng)
        latent = s in holdout_ids
        rows = _sample_rows(spec, s, None if latent else labels, features)
        for name, rws in rows.items():
            all_rows[name].extend(rws)
        for (key_parts), value in labels.items():
            fam = key_parts[0]
            lab = key_parts[1] if len(key_parts) > 1 else ""
            truth_labels.append((s, fam, lab, value))

    db = Database(schema=schema)
    for tdef in schema.tables:
        db.tables[tdef.name] = DataTable(tdef, all_rows[tdef.name])
    save_data_dir(db, out_dir)
    (out_dir / RULES_NAME).write_text(rules_text, encoding="utf-8")
    save_weights(truth, out_dir / TRUTH_WEIGHTS_NAME)
    with (out_dir / TRUTH_LABELS_NAME).open("w", encoding="utf-8") as fh:
        fh.write("sample_id,family,label,value\n")
        for s, fam, lab, value in truth_labels:
            v = "true" if value is True else ("false" if value is False else value)
            fh.write(f"{s},{fam},{lab},{v}\n")
    (out_dir / META_NAME).write_text(
        json.dumps({"spec": spec}, indent=2) + "\n", encoding="utf-8"
    )
    return {
        "samples": n_samples,
        "holdout": len(holdout_ids),
        "n_parameters": len(keys),
        "families": [f["name"] for f in spec["families"]],
        "out_dir": str(out_dir),
    }


# --- canned templates -------------------------------------------------------


def recovery_spec(samples: int = 1000, seed: int = 7) -> dict:
    """Six Boolean labels in two families: bias terms plus cross-family
    co-occurrence, the standard weight-recovery fixture.

    Truth magnitudes either exceed 0.7 or stay below 0.15: a margin around
    the 0.5 sign-recovery threshold, which would otherwise be a coin flip
    for any estimator on weights drawn right at it.
    """
    return {
        "seed": seed,
        "samples": samples,
        "sampling": "exact",
        "families": [
            {"name": "hasAttribute", "kind": "boolean", "labels": ["glossy", "warm", "open"]},
            {"name": "hasAffordance", "kind": "boolean", "labels": ["swim", "hike", "read"]},
        ],
        "feature_dims": 0,
        "rules": [
            {"text": "{(i,w(a),1) | hasAttribute(i,a)}",
             "weight_range": [-1.6, 1.6], "min_abs": 0.7},
            {"text": "{(i,w(a),1) | hasAffordance(i,a)}",
             "weight_range": [-0.15, 0.15]},
            {
                "text": "{((i,a,b),w(a,b),1) | hasAttribute(i,a) & hasAffordance(i,b)}",
                "weight_range": [-1.8, 1.8], "min_abs": 0.7,
            },
        ],
    }


def scene_spec(samples: int = 30, seed: int = 21) -> dict:
    """Scene-shaped KB at toy scale: one multinomial category, Boolean
    attribute and affordance families, continuous features, and the full
    rule set (linear + bias terms, intra- and inter-correlations in all
    four sign patterns)."""
    rules = [
        # image features & scene category
        {"text": "{(i,w(c,d),f) | sceneCategory(i,c) & hasFeature(i,d,f)}",
         "weight_range": [-0.6, 0.6]},
        {"text": "{(i,w(c),1) | sceneCategory(i,c)}", "weight_range": [-0.8, 0.8]},
        # image features & scene affordance
        {"text": "{(i,w(a,d),f) | hasAffordance(i,a) & hasFeature(i,d,f)}",
         "weight_range": [-0.6, 0.6]},
        {"text": "{(i,w(a),1) | hasAffordance(i,a)}", "weight_range": [-0.8, 0.8]},
        # image features & scene attribute
        {"text": "{(i,w(a,d),f) | hasAttribute(i,a) & hasFeature(i,d,f)}",
         "weight_range": [-0.6, 0.6]},
        {"text": "{(i,w(a),1) | hasAttribute(i,a)}", "weight_range": [-0.8, 0.8]},
        # intra-correlations
        {"text": "{((i,a1,a2),w(a1,a2),1) | hasAffordance(i,a1) & hasAffordance(i,a2)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,a1,a2),w(a1,a2),1) | !hasAffordance(i,a1) & !hasAffordance(i,a2)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,a1,a2),w(a1,a2),1) | hasAttribute(i,a1) & hasAttribute(i,a2)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,a1,a2),w(a1,a2),1) | !hasAttribute(i,a1) & !hasAttribute(i,a2)}",
         "weight_range": [-0.5, 0.5]},
        # inter-correlations: category & attribute
        {"text": "{((i,c,a),w(a,c),1) | sceneCategory(i,c) & hasAttribute(i,a)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,c,a),w(a,c),1) | sceneCategory(i,c) & !hasAttribute(i,a)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,c,a),w(a,c),1) | !sceneCategory(i,c) & hasAttribute(i,a)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,c,a),w(a,c),1) | !sceneCategory(i,c) & !hasAttribute(i,a)}",
         "weight_range": [-0.5, 0.5]},
        # inter-correlations: category & affordance
        {"text": "{((i,c,a),w(a,c),1) | sceneCategory(i,c) & hasAffordance(i,a)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,c,a),w(a,c),1) | sceneCategory(i,c) & !hasAffordance(i,a)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,c,a),w(a,c),1) | !sceneCategory(i,c) & hasAffordance(i,a)}",
         "weight_range": [-0.5, 0.5]},
        {"text": "{((i,c,a),w(a,c),1) | !sceneCategory(i,c) & !hasAffordance(i,a)}",
         "weight_range": [-0.5, 0.5]},
    ]
    return {
        "seed": seed,
        "samples": samples,
        "sampling": "exact",
        # the metadata-linked images stay latent so queries have real
        # inference to do; the rest are observed training samples
        "holdout_ids": list(range(8)),
        "families": [
            {"name": "sceneCategory", "kind": "multinomial",
             "labels": ["beach", "forest", "office"]},
            {"name": "hasAttribute", "kind": "boolean",
             "labels": ["sunny", "warm", "glossy", "indoor_lighting", "cluttered_space"]},
            {"name": "hasAffordance", "kind": "boolean",
             "labels": ["swimming", "hiking", "playing_baseball", "shopping"]},
        ],
        "feature_dims": 2,
        "rules": rules,
    }


def scaling_spec(n_variables: int, seed: int = 3) -> dict:
    """Bias-plus-correlation corpus sized to about n_variables label
    variables, sampled factorized (timing fixture)."""
    labels_per_sample = 10
    samples = max(1, n_variables // labels_per_sample)
    return {
        "seed": seed,
        "samples": samples,
        "sampling": "factorized",
        "families": [
            {"name": "hasAttribute", "kind": "boolean",
             "labels": [f"a{j}" for j in range(5)]},
            {"name": "hasAffordance", "kind": "boolean",
             "labels": [f"f{j}" for j in range(5)]},
        ],
        "feature_dims": 0,
        "rules": [
            {"text": "{(i,w(a),1) | hasAttribute(i,a)}", "weight_range": [-1.0, 1.0]},
            {"text": "{(i,w(a),1) | hasAffordance(i,a)}", "weight_range": [-1.0, 1.0]},
            {
                "text": "{((i,a,b),w(a,b),1) | hasAttribute(i,a) & hasAffordance(i,b)}",
                "weight_range": [-0.5, 0.5],
            },
        ],
    }
