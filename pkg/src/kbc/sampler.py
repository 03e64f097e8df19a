"""Gibbs sampling over the label variables of grounded graphs.

Sweeps are systematic scans in shuffled order (shuffle is on by default);
each unobserved discrete variable is re-sampled exactly once per sweep from
its Markov-blanket conditional. Randomness comes from a counter-based Philox
generator keyed by a 64-bit seed; every graph gets its own spawned stream,
so estimates are bit-identical for any worker count and chain trajectories
are reproducible.

Two implementations share one contract: the object-level functions here
(`conditional_distribution`, `gibbs_sweep`) operate on graph objects and
value-level worlds, and the jitted kernels in `compiled` consume the same
uniform stream with the same arithmetic. Fixed seed, same trajectory.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .compiled import (
    CompiledModel,
    _run_chain,
    draws_per_sweep,
    warmup_kernels,
)
from .errors import DomainUnresolvable, ObservedVariable
from .factorgraph import clamped_world, factor_value
from .grounder import FactorGraph, VariableDecl, WeightStore

_CHUNK_DRAWS = 4_000_000


@dataclass(slots=True)
class SamplerConfig:
    burn_in_sweeps: int = 100
    sweeps: int = 1000
    seed: int = 0
    workers: int = 1
    shuffle: bool = True

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.burn_in_sweeps < 0:
            raise ValueError("burn_in_sweeps must be >= 0")


def conditional_distribution(
    var: VariableDecl, world: dict, graph: FactorGraph, weights: WeightStore
) -> dict:
    """P(var = value | rest of world), from the variable's Markov blanket.

    For each candidate value the unnormalized log score is the sum of
    w * f(world with var := value) over the factors touching the variable;
    scores are exponentiated around their max and normalized.
    """
    if isinstance(var, tuple):
        var = graph.variable(var)
    if var.kind == "continuous" or var.observed is not None:
        raise ObservedVariable(f"{var.vid} is evidence; conditioning is a no-op")
    values = var.values()
    scores = _conditional_scores(var, world, graph, weights)
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    z = sum(exps)
    return {value: e / z for value, e in zip(values, exps)}


def _conditional_scores(var, world, graph, weights) -> list[float]:
    values = var.values()
    scores = [0.0 for _ in values]
    scratch = dict(world)
    for f in graph.blanket(var.vid):
        w = weights[f.weight_key]
        if w == 0.0:
            continue
        for k, value in enumerate(values):
            scratch[var.vid] = value
            v = factor_value(f, scratch)
            if v != 0.0:
                scores[k] += w * v
    return scores


@dataclass(slots=True)
class ChainState:
    """One Markov chain: the current world, its RNG stream, a sweep counter."""

    world: dict
    rng: np.random.Generator
    sweep: int = 0
    _free: list = field(default=None, repr=False)


def init_chain(graph: FactorGraph, seed) -> ChainState:
    """Start a chain: evidence clamped, free variables drawn uniformly.

    ``seed`` is a 64-bit integer or a numpy SeedSequence (the per-graph
    spawned streams used by the parallel estimator are SeedSequences).
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(seed))
    world = clamped_world(graph)
    free = graph.free_variables()
    if free:
        u = rng.random(len(free))
        for v, ui in zip(free, u):
            values = v.values()
            world[v.vid] = values[int(ui * len(values))]
    return ChainState(world=world, rng=rng, _free=free)


def _fisher_yates(items: list, u: np.ndarray, start: int) -> int:
    for i in range(len(items) - 1, 0, -1):
        j = int(u[start] * (i + 1))
        start += 1
        items[i], items[j] = items[j], items[i]
    return start


def gibbs_sweep(
    state: ChainState, graph: FactorGraph, weights: WeightStore, shuffle: bool = True
) -> ChainState:
    """Re-sample every unobserved variable exactly once; returns the state.

    Reference implementation of one sweep; consumes the chain's RNG in the
    same order as the compiled kernel (Fisher-Yates shuffle draws, then one
    uniform per variable).
    """
    if state._free is None:
        state._free = graph.free_variables()
    free = list(state._free)
    n = len(free)
    if n > 0:
        draws = state.rng.random(draws_per_sweep(n, shuffle))
        cur = 0
        if shuffle and n > 1:
            cur = _fisher_yates(free, draws, cur)
        for var in free:
            values = var.values()
            scores = _conditional_scores(var, state.world, graph, weights)
            m = max(scores)
            exps = [math.exp(s - m) for s in scores]
            total = sum(exps)
            t = draws[cur] * total
            cur += 1
            acc = 0.0
            pick = len(values) - 1
            for k, e in enumerate(exps):
                acc += e
                if t < acc:
                    pick = k
                    break
            state.world[var.vid] = values[pick]
    state.sweep += 1
    return state


# --- compiled estimation ---------------------------------------------------


def normalize_targets(targets) -> list[list[tuple]]:
    """Accept (vid, value) pairs or conjunction lists of (vid, value, negated)."""
    out = []
    for t in targets:
        if isinstance(t, tuple) and len(t) == 2 and not isinstance(t[0], (list, tuple)):
            raise TypeError("target must be a (vid, value) pair or a conjunction list")
        if isinstance(t, tuple) and len(t) == 2:
            out.append([(t[0], t[1], False)])
        else:
            conj = []
            for c in t:
                if len(c) == 2:
                    conj.append((c[0], c[1], False))
                else:
                    conj.append((c[0], c[1], bool(c[2])))
            out.append(conj)
    return out


def _graph_of_target(conj, model: CompiledModel):
    samples = {vid[0] for vid, _, _ in conj}
    if len(samples) > 1:
        raise DomainUnresolvable(f"target spans samples {sorted(samples)}")
    return next(iter(samples)) if samples else None


def _run_graph(model, gi, weights_arr, tgt, tallies_out, config, seed_seq, full):
    v0, v1 = int(model.graph_var_ptr[gi]), int(model.graph_var_ptr[gi + 1])
    free = model.free[model.free_ptr[gi] : model.free_ptr[gi + 1]]
    rng = np.random.Generator(np.random.Philox(seed_seq))
    # graphs are disconnected, so threads write disjoint slices of `full`
    full[v0:v1] = np.maximum(model.observed[v0:v1], 0)
    n = len(free)
    if n:
        u0 = rng.random(n)
        full[free] = (u0 * model.dom[free]).astype(np.int32)
    tgt_ptr, tgt_var, tgt_val, tgt_neg, local_idx = tgt
    tallies = np.zeros(len(local_idx), dtype=np.int64)
    order = np.empty(max(n, 1), dtype=np.int32)
    scores = np.empty(model.max_dom, dtype=np.float64)
    per_sweep = draws_per_sweep(n, config.shuffle)
    total_sweeps = config.burn_in_sweeps + config.sweeps
    chunk = max(1, _CHUNK_DRAWS // max(per_sweep, 1))
    done = 0
    kept_total = 0
    while done < total_sweeps:
        nsw = min(chunk, total_sweeps - done)
        u = rng.random(nsw * per_sweep) if per_sweep else np.zeros(0)
        skip = max(0, config.burn_in_sweeps - done)
        _, kept = _run_chain(
            full, free, model.dom,
            model.fac_weight, model.fac_scale, model.fac_ref_ptr,
            model.ref_var, model.ref_val, model.ref_neg,
            model.var_fac_ptr, model.var_fac,
            weights_arr, u, config.shuffle, nsw, skip,
            tgt_ptr, tgt_var, tgt_val, tgt_neg, tallies, order, scores,
        )
        kept_total += kept
        done += nsw
    for pos, local in enumerate(local_idx):
        tallies_out[local] = tallies[pos] / kept_total
    return kept_total


def parallel_estimate(
    graphs: list[FactorGraph],
    weights: WeightStore,
    targets,
    config: SamplerConfig,
) -> np.ndarray:
    """Estimate conjunction-indicator probabilities across many graphs.

    Each target is satisfied in a sampled world iff all its conjuncts hold;
    its estimate is the fraction of post-burn-in sweeps satisfying it.
    Graphs are partitioned across worker threads; every graph owns a spawned
    RNG stream keyed by its position, so results do not depend on the worker
    count. Targets over unknown variables or values estimate to exactly 0;
    empty conjunctions to exactly 1.
    """
    warmup_kernels()
    conjs = normalize_targets(targets)
    model = CompiledModel(graphs, weights.sorted_keys())
    weights_arr = model.weights_array(weights)
    results = np.zeros(len(conjs), dtype=np.float64)
    sample_to_gi = {g.sample_id: i for i, g in enumerate(graphs)}

    compiled_targets = model.compile_targets(conjs)
    tgt_ptr, tgt_var, tgt_val, tgt_neg, impossible = compiled_targets
    by_graph: dict[int, list[int]] = {}
    for ti, conj in enumerate(conjs):
        if not conj:
            results[ti] = 1.0
            continue
        if impossible[ti]:
            results[ti] = 0.0
            continue
        sample = _graph_of_target(conj, model)
        gi = sample_to_gi.get(sample)
        if gi is None:
            results[ti] = 0.0
            continue
        by_graph.setdefault(gi, []).append(ti)

    seeds = np.random.SeedSequence(config.seed).spawn(len(graphs))
    full = np.zeros(model.n_vars, dtype=np.int32)
    jobs = []
    for gi, target_ids in sorted(by_graph.items()):
        ptr = [0]
        var_l, val_l, neg_l = [], [], []
        for ti in target_ids:
            var_l.extend(tgt_var[tgt_ptr[ti] : tgt_ptr[ti + 1]])
            val_l.extend(tgt_val[tgt_ptr[ti] : tgt_ptr[ti + 1]])
            neg_l.extend(tgt_neg[tgt_ptr[ti] : tgt_ptr[ti + 1]])
            ptr.append(len(var_l))
        tgt = (
            np.asarray(ptr, dtype=np.int64),
            np.asarray(var_l, dtype=np.int32),
            np.asarray(val_l, dtype=np.int32),
            np.asarray(neg_l, dtype=np.uint8),
            target_ids,
        )
        jobs.append((gi, tgt))

    if config.workers == 1:
        for gi, tgt in jobs:
            _run_graph(model, gi, weights_arr, tgt, results, config, seeds[gi], full)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(
                    _run_graph, model, gi, weights_arr, tgt, results, config,
                    seeds[gi], full,
                )
                for gi, tgt in jobs
            ]
            for f in futures:
                f.result()
    return results


def estimate_marginals(
    graph: FactorGraph, weights: WeightStore, targets, config: SamplerConfig
) -> np.ndarray:
    """Single-graph wrapper around parallel_estimate."""
    return parallel_estimate([graph], weights, targets, config)


def single_variable_marginals(
    graph: FactorGraph, weights: WeightStore, config: SamplerConfig
) -> dict:
    """Estimated {(vid, value): probability} for every free variable."""
    free = graph.free_variables()
    targets = []
    index = []
    for v in free:
        for value in v.values():
            targets.append([(v.vid, value, False)])
            index.append((v.vid, value))
    probs = estimate_marginals(graph, weights, targets, config)
    return dict(zip(index, probs.tolist()))


def throughput_bench(
    config: SamplerConfig, graphs: list[FactorGraph], weights: WeightStore
) -> dict:
    """Measure sustained variable re-samplings per wall-clock second."""
    warmup_kernels()
    model = CompiledModel(graphs, weights.sorted_keys())
    weights_arr = model.weights_array(weights)
    n_free_total = int(len(model.free))
    empty_t = (
        np.zeros(1, dtype=np.int64),
        np.zeros(0, dtype=np.int32),
        np.zeros(0, dtype=np.int32),
        np.zeros(0, dtype=np.uint8),
    )

    shared_world = np.maximum(model.observed, 0).astype(np.int32)

    def run_slice(gis, seed_seqs):
        full = shared_world
        for gi in gis:
            free = model.free[model.free_ptr[gi] : model.free_ptr[gi + 1]]
            n = len(free)
            if n == 0:
                continue
            rng = np.random.Generator(np.random.Philox(seed_seqs[gi]))
            full[free] = (rng.random(n) * model.dom[free]).astype(np.int32)
            order = np.empty(n, dtype=np.int32)
            scores = np.empty(model.max_dom, dtype=np.float64)
            per_sweep = draws_per_sweep(n, config.shuffle)
            done = 0
            chunk = max(1, _CHUNK_DRAWS // max(per_sweep, 1))
            tallies = np.zeros(0, dtype=np.int64)
            while done < config.sweeps:
                nsw = min(chunk, config.sweeps - done)
                u = rng.random(nsw * per_sweep)
                _run_chain(
                    full, free, model.dom,
                    model.fac_weight, model.fac_scale, model.fac_ref_ptr,
                    model.ref_var, model.ref_val, model.ref_neg,
                    model.var_fac_ptr, model.var_fac,
                    weights_arr, u, config.shuffle, nsw, nsw,
                    empty_t[0], empty_t[1], empty_t[2], empty_t[3],
                    tallies, order, scores,
                )
                done += nsw

    seeds = np.random.SeedSequence(config.seed).spawn(len(graphs))
    partitions = [list(range(w, len(graphs), config.workers)) for w in range(config.workers)]
    start = time.perf_counter()
    if config.workers == 1:
        run_slice(partitions[0], seeds)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_slice, p, seeds) for p in partitions]
            for f in futures:
                f.result()
    elapsed = time.perf_counter() - start
    resamples = n_free_total * config.sweeps
    return {
        "n_variables": n_free_total,
        "workers": config.workers,
        "sweeps": config.sweeps,
        "seconds": elapsed,
        "vars_per_second": resamples / elapsed if elapsed > 0 else float("inf"),
    }
