"""Weight learning by CD-1 stochastic gradient descent.

The gradient of one graph's negative log likelihood w.r.t. a tied weight is
approximated by f(I') - f(I''), where I' is the training-data world and I''
is the world after a single Gibbs sweep started at I'. Updates apply

    w_k <- w_k + eta * sum_k(f(I') - f(I'')) - eta * 2 * lambda * w_k

for every weight key k the graph touches, with the gradient summed over the
graph's factor instances sharing k. At model time every label variable is
free: observations live in the data world, not in the sampled chain. Labels
missing from the data world are filled by one Gibbs sweep over them with the
observed labels clamped before f(I') is read.

Serial training is deterministic given the seed. Parallel training is
Hogwild style: workers own disjoint sample partitions and apply updates to
the shared weight array concurrently without locks; lost updates are
tolerated, convergence (not bitwise equality with serial) is the contract.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from threading import Thread

import numpy as np

from .compiled import (
    CompiledModel,
    _cd1_epoch,
    cd1_draws_per_graph,
    draws_per_sweep,
    warmup_kernels,
)
from .errors import NonFiniteWeight, UnassignedVariable
from .factorgraph import (
    exact_log_partition,
    factor_value,
    log_weight,
)
from .grounder import FactorGraph, WeightStore
from .sampler import _conditional_scores, _fisher_yates

TrainingCorpus = list  # [(FactorGraph, data world dict), ...]


@dataclass(slots=True)
class LearnConfig:
    eta: float = 0.01
    lam: float = 0.01
    epochs: int = 10
    eta_decay: float = 0.95
    update_granularity: str = "per_sweep"  # "per_sweep" | "per_step"
    workers: int = 1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError("eta must be positive and finite")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0 < self.eta_decay <= 1):
            raise ValueError("eta_decay must be in (0, 1]")
        if self.update_granularity not in ("per_sweep", "per_step"):
            raise ValueError("update_granularity must be per_sweep or per_step")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(slots=True)
class TrainResult:
    weights: WeightStore
    metrics: list


def corpus_from_graphs(graphs: list[FactorGraph]) -> TrainingCorpus:
    """Training corpus with data worlds read off the observed label values."""
    corpus = []
    for g in graphs:
        world = {
            v.vid: v.observed
            for v in g.variables
            if v.kind != "continuous" and v.observed is not None
        }
        corpus.append((g, world))
    return corpus


def strip_labels(graph: FactorGraph) -> FactorGraph:
    """The model-time view of a graph: every label variable free."""
    variables = [
        v if v.kind == "continuous" else replace(v, observed=None)
        for v in graph.variables
    ]
    return FactorGraph(
        sample_id=graph.sample_id, variables=variables, factors=graph.factors
    )


def _label_vars(graph: FactorGraph):
    return [v for v in graph.variables if v.kind != "continuous"]


def _evidence_world(graph: FactorGraph) -> dict:
    """Continuous evidence only; label values must come from the data world."""
    return {
        v.vid: v.observed for v in graph.variables if v.kind == "continuous"
    }


def _mirror_sweep(stripped, world, vars_to_sample, weights, rng, shuffle):
    """One sweep consuming the RNG exactly like the compiled kernel."""
    n = len(vars_to_sample)
    if n == 0:
        return
    order = list(vars_to_sample)
    u = rng.random(draws_per_sweep(n, shuffle))
    cur = 0
    if shuffle and n > 1:
        cur = _fisher_yates(order, u, cur)
    for var in order:
        values = var.values()
        scores = _conditional_scores(var, world, stripped, weights)
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        total = sum(exps)
        t = u[cur] * total
        cur += 1
        acc = 0.0
        pick = len(values) - 1
        for k, e in enumerate(exps):
            acc += e
            if t < acc:
                pick = k
                break
        world[var.vid] = values[pick]


def complete_data_world(
    graph: FactorGraph,
    data_world: dict,
    weights: WeightStore,
    rng,
    shuffle: bool = True,
) -> dict:
    """Fill latent labels: uniform init, then one sweep conditioned on the
    observed labels. Returns a complete world including continuous evidence."""
    stripped = strip_labels(graph)
    world = _evidence_world(graph)
    world.update(data_world)
    latents = [v for v in _label_vars(graph) if v.vid not in data_world]
    for v in latents:
        values = v.values()
        world[v.vid] = values[int(rng.random() * len(values))]
    _mirror_sweep(stripped, world, latents, weights, rng, shuffle)
    return world


def cd1_negative_world(
    graph: FactorGraph,
    data_world: dict,
    weights: WeightStore,
    rng,
    shuffle: bool = True,
) -> dict:
    """One full Gibbs sweep over every label variable, started at the data
    world, under the current weights. The chain ignores label observations
    (they are data, not model-time evidence)."""
    stripped = strip_labels(graph)
    labels = _label_vars(graph)
    world = _evidence_world(graph)
    world.update(data_world)
    for v in labels:
        if v.vid not in world:
            raise UnassignedVariable(f"data world does not assign {v.vid}")
    _mirror_sweep(stripped, world, labels, weights, rng, shuffle)
    return world


def cd1_update(
    graph: FactorGraph,
    data_world: dict,
    weights: WeightStore,
    eta: float,
    lam: float,
    rng=None,
    negative_world: dict | None = None,
    shuffle: bool = True,
) -> WeightStore:
    """Apply one CD-1 update for one graph, mutating and returning weights."""
    positive = _evidence_world(graph)
    positive.update(data_world)
    if negative_world is None:
        negative_world = cd1_negative_world(graph, data_world, weights, rng, shuffle)
    grads: dict = {}
    for f in graph.factors:
        d = factor_value(f, positive) - factor_value(f, negative_world)
        grads[f.weight_key] = grads.get(f.weight_key, 0.0) + d
    for key, g in grads.items():
        w = weights[key]
        nw = w + eta * g - eta * 2.0 * lam * w
        if not math.isfinite(nw):
            raise NonFiniteWeight(
                f"weight {key} became non-finite on sample {graph.sample_id}"
            )
        weights[key] = nw
    return weights


def initial_weights(corpus: TrainingCorpus) -> WeightStore:
    keys = {f.weight_key for g, _ in corpus for f in g.factors}
    return WeightStore(keys=keys)


def _compile_corpus(corpus: TrainingCorpus, keys=None):
    graphs = [g for g, _ in corpus]
    if keys is None:
        keys = initial_weights(corpus).sorted_keys()
    model = CompiledModel(graphs, keys)
    data_vals = np.full(model.n_vars, -1, dtype=np.int32)
    for gi, (graph, world) in enumerate(corpus):
        s, e = int(model.graph_var_ptr[gi]), int(model.graph_var_ptr[gi + 1])
        for i in range(s, e):
            vid = model.var_ids[i]
            if vid in world:
                data_vals[i] = model.value_maps[i][world[vid]]
    return model, data_vals


def _train_impl(
    corpus: TrainingCorpus, config: LearnConfig, weights: WeightStore | None
) -> TrainResult:
    warmup_kernels()
    if not corpus:
        return TrainResult(
            weights=weights.copy() if weights is not None else WeightStore(),
            metrics=[],
        )
    keys = weights.sorted_keys() if weights is not None else None
    model, data_vals = _compile_corpus(corpus, keys)
    if weights is None:
        weights_arr = np.zeros(len(model.weight_keys), dtype=np.float64)
    else:
        weights_arr = model.weights_array(weights)
    n_graphs = len(corpus)
    workers = min(config.workers, n_graphs)
    per_step = 1 if config.update_granularity == "per_step" else 0

    graph_draws = np.zeros(n_graphs, dtype=np.int64)
    for gi in range(n_graphs):
        s, e = int(model.graph_var_ptr[gi]), int(model.graph_var_ptr[gi + 1])
        n_lat = int(np.count_nonzero(data_vals[s:e] < 0))
        graph_draws[gi] = cd1_draws_per_graph(e - s, n_lat, config.shuffle)

    partitions = [
        np.arange(w, n_graphs, workers, dtype=np.int64) for w in range(workers)
    ]
    rngs = [
        np.random.Generator(np.random.Philox(ss))
        for ss in np.random.SeedSequence(config.seed).spawn(workers)
    ]
    world = np.maximum(model.observed, 0).astype(np.int32)
    n_weights = len(model.weight_keys)
    scratch = [
        dict(
            grad=np.zeros(n_weights, dtype=np.float64),
            mask=np.zeros(n_weights, dtype=np.uint8),
            touched=np.zeros(max(model.max_graph_factors, 1), dtype=np.int32),
            fprime=np.zeros(max(model.max_graph_factors, 1), dtype=np.float64),
            order=np.zeros(max(model.max_graph_vars, 1), dtype=np.int32),
            scores=np.zeros(model.max_dom, dtype=np.float64),
        )
        for _ in range(workers)
    ]

    metrics = []
    eta = config.eta
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        results = [None] * workers

        def run_worker(w):
            part = partitions[w]
            rng = rngs[w]
            order = part[rng.permutation(len(part))]
            budget = int(graph_draws[order].sum())
            u = rng.random(budget)
            sc = scratch[w]
            cur, bad, grad_l1 = _cd1_epoch(
                order, model.graph_var_ptr, model.graph_fac_ptr,
                model.dom, data_vals,
                model.fac_weight, model.fac_scale, model.fac_ref_ptr,
                model.ref_var, model.ref_val, model.ref_neg,
                model.var_fac_ptr, model.var_fac,
                weights_arr, eta, config.lam, config.shuffle, per_step,
                world, u, sc["grad"], sc["mask"], sc["touched"],
                sc["fprime"], sc["order"], sc["scores"],
            )
            results[w] = (cur, budget, bad, grad_l1, order)

        if workers == 1:
            run_worker(0)
        else:
            threads = [Thread(target=run_worker, args=(w,)) for w in range(workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        grad_l1 = 0.0
        for w, res in enumerate(results):
            cur, budget, bad, gl1, order = res
            if bad >= 0:
                gi = int(order[bad])
                raise NonFiniteWeight(
                    f"non-finite weight after sample {corpus[gi][0].sample_id}"
                )
            assert cur == budget, "kernel consumed an unexpected number of draws"
            grad_l1 += gl1
        elapsed = time.perf_counter() - t0
        metrics.append(
            {
                "epoch": epoch,
                "eta": eta,
                "grad_l1": grad_l1,
                "weight_l2": float(np.sqrt(np.sum(weights_arr**2))),
                "seconds": elapsed,
                "samples_per_sec": n_graphs / elapsed if elapsed > 0 else float("inf"),
            }
        )
        eta *= config.eta_decay
    return TrainResult(weights=model.store_from_array(weights_arr), metrics=metrics)


def train(
    corpus: TrainingCorpus, config: LearnConfig, weights: WeightStore | None = None
) -> TrainResult:
    """Serial, deterministic CD-1 training (single worker regardless of config)."""
    return _train_impl(corpus, replace(config, workers=1), weights)


def parallel_train(
    corpus: TrainingCorpus, config: LearnConfig, weights: WeightStore | None = None
) -> TrainResult:
    """Hogwild-style training across config.workers lock-free threads."""
    return _train_impl(corpus, config, weights)


def exact_nll(
    corpus: TrainingCorpus, weights: WeightStore, lam: float = 0.0
) -> float:
    """Exact regularized negative log likelihood via the enumeration oracle.

    Every label variable is free in the partition sum (training semantics);
    data worlds must assign all of them.
    """
    total = 0.0
    for graph, data_world in corpus:
        stripped = strip_labels(graph)
        world = _evidence_world(graph)
        world.update(data_world)
        for v in _label_vars(graph):
            if v.vid not in world:
                raise UnassignedVariable(f"data world does not assign {v.vid}")
        total += exact_log_partition(stripped, weights) - log_weight(
            stripped, world, weights
        )
    reg = lam * sum(w * w for _, w in weights.items_sorted())
    return total + reg
