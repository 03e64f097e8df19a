"""Benchmarks: sampler throughput and end-to-end construction scaling."""

from __future__ import annotations

import tempfile
import time
from pathlib import Path

import numpy as np

from .errors import InvalidSize
from .compiled import warmup_kernels
from .kbio import build_kb
from .learner import LearnConfig, corpus_from_graphs, parallel_train
from .sampler import SamplerConfig, throughput_bench
from .synth import generate, scaling_spec
from .synthgraphs import tied_boolean_graphs

DEFAULT_THROUGHPUT_SPEC = {
    "sizes": [10_000, 100_000],
    "workers": [1, 2, 4],
    "vars_per_graph": 500,
    "degree": 8,
    "weight_scale": 1.0,
    "sweeps": 20,
    "seed": 0,
}


def throughput_rows(spec: dict) -> list[dict]:
    """Measure vars/second over (graph size x workers); one dict per row."""
    spec = {**DEFAULT_THROUGHPUT_SPEC, **spec}
    warmup_kernels()
    rows = []
    for size in spec["sizes"]:
        if size < 1:
            raise InvalidSize(f"graph size {size} must be positive")
        vpg = min(spec["vars_per_graph"], size)
        n_graphs = max(1, size // vpg)
        graphs, store = tied_boolean_graphs(
            n_graphs=n_graphs,
            vars_per_graph=vpg,
            degree=spec["degree"],
            weight_scale=spec["weight_scale"],
            seed=spec["seed"],
        )
        for workers in spec["workers"]:
            cfg = SamplerConfig(
                burn_in_sweeps=0, sweeps=spec["sweeps"], seed=spec["seed"],
                workers=workers,
            )
            r = throughput_bench(cfg, graphs, store)
            rows.append(
                {
                    "graph_size": n_graphs * vpg,
                    "workers": workers,
                    "vars_per_second": r["vars_per_second"],
                }
            )
    return rows


def scaling_bench(
    sizes: list[int],
    seed: int = 0,
    workers: int = 1,
    workdir: str | Path | None = None,
) -> dict:
    """Generate corpora of the requested variable counts and time compile
    plus one learning epoch for each; fit the log-log slope.

    Returns {"rows": [(n_variables, wall_seconds), ...], "slope": float|None}.
    """
    if not sizes:
        raise InvalidSize("at least one size required")
    if any(s < 1 for s in sizes):
        raise InvalidSize("sizes must be positive")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidSize("sizes must be strictly increasing")
    warmup_kernels()
    tmp_ctx = tempfile.TemporaryDirectory() if workdir is None else None
    base = Path(tmp_ctx.name) if tmp_ctx else Path(workdir)
    rows = []
    try:
        for size in sizes:
            out = base / f"scaling_{size}"
            generate(scaling_spec(size, seed=seed), out)
            t0 = time.perf_counter()
            kb, stats = build_kb(out, out / "rules.kbr")
            corpus = corpus_from_graphs(kb.graphs)
            cfg = LearnConfig(epochs=1, seed=seed, workers=workers)
            parallel_train(corpus, cfg, kb.weights)
            wall = time.perf_counter() - t0
            rows.append((stats["n_variables"], wall))
    finally:
        if tmp_ctx:
            tmp_ctx.cleanup()
    slope = None
    if len(rows) >= 2:
        xs = np.log10([r[0] for r in rows])
        ys = np.log10([max(r[1], 1e-9) for r in rows])
        slope = float(np.polyfit(xs, ys, 1)[0])
    return {"rows": rows, "slope": slope}


def format_scaling_csv(result: dict) -> str:
    lines = ["n_variables,wall_seconds"]
    for n, w in result["rows"]:
        lines.append(f"{n},{w:.6f}")
    return "\n".join(lines) + "\n"


def format_throughput_csv(rows: list[dict]) -> str:
    lines = ["graph_size,workers,vars_per_second"]
    for r in rows:
        lines.append(f"{r['graph_size']},{r['workers']},{r['vars_per_second']:.1f}")
    return "\n".join(lines) + "\n"
