"""Command-line driver for the KB construction pipeline.

Subcommands: ingest, compile, learn, query, oracle, bench, synth, pipeline.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import bench as benchmod
from . import synth as synthmod
from .datastore import load_data_dir, table_stats
from .errors import KbcError
from .factorgraph import exact_query_marginal
from .kbio import build_kb, load_kb, save_kb, save_weights, update_kb_weights
from .learner import LearnConfig, corpus_from_graphs, parallel_train, train
from .query import (
    answer,
    answer_values,
    bind_candidates,
    parse_query,
    _probabilistic_conjunction,
)
from .sampler import SamplerConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1 per the CLI contract
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--verbose", action="store_true")


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        burn_in_sweeps=args.burn_in,
        sweeps=args.sweeps,
        seed=args.seed,
        workers=args.workers,
    )


def _print_stats(stats: dict, seconds: float | None = None) -> None:
    print(f"variables   {stats['n_variables']}")
    print(f"factors     {stats['n_factors']}")
    print(f"parameters  {stats['n_parameters']}")
    if seconds is not None:
        print(f"seconds     {seconds:.2f}")


def cmd_ingest(args) -> int:
    db = load_data_dir(args.data_dir)
    for tdef in db.schema.tables:
        stats = table_stats(db.table(tdef.name))
        distinct = ", ".join(
            f"{c}={n}" for c, n in stats["distinct_counts"].items()
        )
        print(f"{tdef.name} ({tdef.role}): rows={stats['row_count']} distinct[{distinct}]")
    return 0


def cmd_compile(args) -> int:
    t0 = time.perf_counter()
    kb, stats = build_kb(args.data_dir, args.rules, factor_cap=args.factor_cap)
    save_kb(args.out, args.data_dir, args.rules, stats, kb=kb, seed=args.seed)
    _print_stats(stats, time.perf_counter() - t0)
    return 0


def cmd_learn(args) -> int:
    kb, manifest = load_kb(args.kb)
    corpus = corpus_from_graphs(kb.graphs)
    config = LearnConfig(
        eta=args.eta,
        lam=getattr(args, "lambda"),
        epochs=args.epochs,
        eta_decay=args.eta_decay,
        update_granularity=args.granularity,
        workers=args.workers,
        seed=args.seed,
    )
    runner = train if args.workers == 1 else parallel_train
    result = runner(corpus, config, kb.weights)
    out = Path(args.out) if args.out else Path(args.kb) / "weights.tsv"
    if out == Path(args.kb) / "weights.tsv":
        update_kb_weights(args.kb, result.weights)
    else:
        save_weights(result.weights, out)
    metrics_path = out.with_suffix(out.suffix + ".metrics.json")
    metrics_path.write_text(
        json.dumps(result.metrics, indent=2) + "\n", encoding="utf-8"
    )
    if args.verbose:
        for m in result.metrics:
            print(
                f"epoch {m['epoch']}: eta={m['eta']:.5f} grad_l1={m['grad_l1']:.3f} "
                f"samples/s={m['samples_per_sec']:.1f}"
            )
    print(f"weights written to {out}")
    return 0


def cmd_query(args) -> int:
    kb, _ = load_kb(args.kb, weights_path=args.weights)
    query = parse_query(Path(args.query).read_text(encoding="utf-8"))
    config = _sampler_config(args)
    answers = answer(query, kb, config, top_k=args.top)
    if args.json:
        print(
            json.dumps(
                [
                    {"rank": i + 1, "tuple": list(a.values), "probability": a.probability}
                    for i, a in enumerate(answers)
                ]
            )
        )
    else:
        for i, a in enumerate(answers):
            tup = ",".join(str(v) for v in a.values)
            print(f"{i + 1}\t{tup}\t{a.probability:.6f}")
    return 0


def cmd_oracle(args) -> int:
    kb, _ = load_kb(args.kb, weights_path=args.weights)
    query = parse_query(Path(args.query).read_text(encoding="utf-8"))
    graph = kb.graph_for(args.sample)
    if graph is None:
        raise KbcError(f"no factor graph for sample {args.sample}")
    candidates = bind_candidates(query, kb)
    printed = 0
    for binding in candidates:
        sample, conj = _probabilistic_conjunction(query, binding, kb)
        if sample is not None and sample != args.sample:
            continue
        values = answer_values(query, binding)

        def indicator(world, conj=conj):
            for vid, value, neg in conj:
                if (world.get(vid) == value) == neg:
                    return False
            return True

        p = exact_query_marginal(graph, indicator, kb.weights)
        tup = ",".join(str(v) for v in values)
        print(f"{tup}\t{p:.10f}")
        printed += 1
    if printed == 0:
        print("no candidates bind to the requested sample", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    if args.scaling:
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [
            1000, 10_000, 100_000, 1_000_000,
        ]
        result = benchmod.scaling_bench(sizes, seed=args.seed, workers=args.workers)
        csv_text = benchmod.format_scaling_csv(result)
        slope = result["slope"]
        print(csv_text, end="")
        print(f"log-log slope: {'n/a' if slope is None else f'{slope:.3f}'}")
    else:
        spec = {}
        if args.spec:
            spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        spec.setdefault("seed", args.seed)
        rows = benchmod.throughput_rows(spec)
        csv_text = benchmod.format_throughput_csv(rows)
        print(csv_text, end="")
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    elif args.template == "recovery":
        spec = synthmod.recovery_spec(seed=args.seed)
    elif args.template == "scene":
        spec = synthmod.scene_spec(seed=args.seed)
    else:
        raise KbcError("synth needs --spec or --template")
    if args.samples:
        spec["samples"] = args.samples
    spec.setdefault("seed", args.seed)
    summary = synthmod.generate(spec, args.out)
    print(json.dumps(summary))
    return 0


def cmd_pipeline(args) -> int:
    stage = "ingest"
    try:
        load_data_dir(args.data_dir)
        stage = "compile"
        t0 = time.perf_counter()
        kb, stats = build_kb(args.data_dir, args.rules, factor_cap=args.factor_cap)
        save_kb(args.out, args.data_dir, args.rules, stats, kb=kb, seed=args.seed)
        if args.dry_run:
            _print_stats(stats, time.perf_counter() - t0)
            return 0
        stage = "learn"
        corpus = corpus_from_graphs(kb.graphs)
        config = LearnConfig(
            eta=args.eta,
            lam=getattr(args, "lambda"),
            epochs=args.epochs,
            workers=args.workers,
            seed=args.seed,
        )
        runner = train if args.workers == 1 else parallel_train
        result = runner(corpus, config, kb.weights)
        update_kb_weights(args.out, result.weights)
        _print_stats(stats, time.perf_counter() - t0)
        print(f"kb written to {args.out}")
        return 0
    except KbcError as exc:
        print(f"pipeline failed in stage {stage}: {exc}", file=sys.stderr)
        return exc.exit_code


def build_parser() -> _Parser:
    parser = _Parser(prog="kbc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and report the data tables")
    p.add_argument("--data-dir", required=True)
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("compile", help="ground rules into a KB directory")
    p.add_argument("--rules", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor-cap", type=int, default=None)
    _common(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("learn", help="learn weights by CD-1 gradient descent")
    p.add_argument("--kb", required=True)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--lambda", type=float, default=0.01, dest="lambda")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--eta-decay", type=float, default=0.95)
    p.add_argument(
        "--granularity", choices=("per_sweep", "per_step"), default="per_sweep"
    )
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("query", help="answer a conjunctive query")
    p.add_argument("--kb", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--query", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--sweeps", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--json", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("oracle", help="exact query marginals for one sample")
    p.add_argument("--kb", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--query", required=True)
    _common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="throughput or scaling benchmarks")
    p.add_argument("--spec", default=None, help="throughput spec JSON")
    p.add_argument("--scaling", action="store_true")
    p.add_argument("--sizes", default=None, help="comma-separated variable counts")
    p.add_argument("--out", default=None, help="write the CSV here too")
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", default=None)
    p.add_argument("--template", choices=("recovery", "scene"), default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="ingest, compile and learn end to end")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor-cap", type=int, default=None)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--lambda", type=float, default=0.01, dest="lambda")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--dry-run", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
