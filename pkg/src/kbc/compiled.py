"""Flat-array form of grounded graphs plus the jitted sampling kernels.

Discrete variables become integer slots (boolean false/true -> 0/1,
multinomial levels -> their index in the sorted domain). Continuous evidence
never changes, so each linear factor's feature value is folded into a
per-factor scale at compile time and continuous variables disappear from the
compiled model entirely. A world is then one int32 array.

All randomness is consumed from caller-supplied uniform buffers (drawn from
a counter-based Philox generator), so kernels are deterministic and chains
are reproducible regardless of chunking or thread count. Shuffled sweep
order uses an in-kernel Fisher-Yates over the same buffer.

The kernels release the GIL; Hogwild-style training runs them on plain
threads against one shared weight array.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import UnresolvedDomain
from .grounder import FactorGraph, WeightKey, WeightStore


class CompiledModel:
    """Structure-of-arrays view over a list of disconnected factor graphs."""

    def __init__(self, graphs: list[FactorGraph], weight_keys: list[WeightKey]):
        self.graphs = graphs
        self.weight_keys = list(weight_keys)
        self.weight_index = {k: i for i, k in enumerate(self.weight_keys)}

        var_ids: list = []
        var_index: dict = {}
        dom: list[int] = []
        observed: list[int] = []
        value_maps: list[dict] = []
        domains: list[tuple] = []
        graph_var_ptr = [0]
        for g in graphs:
            for v in g.variables:
                if v.kind == "continuous":
                    continue
                values = v.values()
                vmap = {val: i for i, val in enumerate(values)}
                var_index[v.vid] = len(var_ids)
                var_ids.append(v.vid)
                dom.append(len(values))
                observed.append(-1 if v.observed is None else vmap[v.observed])
                value_maps.append(vmap)
                domains.append(values)
            graph_var_ptr.append(len(var_ids))

        fac_weight: list[int] = []
        fac_scale: list[float] = []
        ref_ptr = [0]
        ref_var: list[int] = []
        ref_val: list[int] = []
        ref_neg: list[bool] = []
        graph_fac_ptr = [0]
        for g in graphs:
            for f in g.factors:
                fac_weight.append(self.weight_index[f.weight_key])
                if f.kind == "linear":
                    feat = g.variable(f.feature_ref).observed
                    fac_scale.append(float(feat) * f.constant)
                else:
                    fac_scale.append(f.constant)
                for vid, want, neg in zip(f.var_refs, f.required_values, f.negated):
                    vi = var_index[vid]
                    vmap = value_maps[vi]
                    if want not in vmap:
                        raise UnresolvedDomain(
                            f"factor requires {want!r}, not in domain of {vid}"
                        )
                    ref_var.append(vi)
                    ref_val.append(vmap[want])
                    ref_neg.append(neg)
                ref_ptr.append(len(ref_var))
            graph_fac_ptr.append(len(fac_weight))

        self.var_ids = var_ids
        self.var_index = var_index
        self.value_maps = value_maps
        self.domains = domains
        self.n_vars = len(var_ids)
        self.n_factors = len(fac_weight)
        self.dom = np.asarray(dom, dtype=np.int32)
        self.observed = np.asarray(observed, dtype=np.int32)
        self.graph_var_ptr = np.asarray(graph_var_ptr, dtype=np.int64)
        self.graph_fac_ptr = np.asarray(graph_fac_ptr, dtype=np.int64)
        self.fac_weight = np.asarray(fac_weight, dtype=np.int32)
        self.fac_scale = np.asarray(fac_scale, dtype=np.float64)
        self.fac_ref_ptr = np.asarray(ref_ptr, dtype=np.int64)
        self.ref_var = (
            np.asarray(ref_var, dtype=np.int32)
            if ref_var
            else np.zeros(0, dtype=np.int32)
        )
        self.ref_val = (
            np.asarray(ref_val, dtype=np.int32)
            if ref_val
            else np.zeros(0, dtype=np.int32)
        )
        self.ref_neg = (
            np.asarray(ref_neg, dtype=np.uint8)
            if ref_neg
            else np.zeros(0, dtype=np.uint8)
        )
        self._build_adjacency()
        self.max_dom = int(self.dom.max()) if self.n_vars else 1
        self.max_graph_vars = (
            int(np.diff(self.graph_var_ptr).max()) if graphs else 0
        )
        self.max_graph_factors = (
            int(np.diff(self.graph_fac_ptr).max()) if graphs else 0
        )

        # inference-time free variables (unobserved), grouped by graph
        free_mask = self.observed < 0
        self.free = np.nonzero(free_mask)[0].astype(np.int32)
        counts = np.zeros(len(graphs), dtype=np.int64)
        for gi in range(len(graphs)):
            s, e = self.graph_var_ptr[gi], self.graph_var_ptr[gi + 1]
            counts[gi] = int(free_mask[s:e].sum())
        self.free_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def _build_adjacency(self) -> None:
        n_fac = self.n_factors
        if len(self.ref_var) == 0:
            self.var_fac_ptr = np.zeros(self.n_vars + 1, dtype=np.int64)
            self.var_fac = np.zeros(0, dtype=np.int32)
            return
        ref_fac = np.repeat(
            np.arange(n_fac, dtype=np.int64), np.diff(self.fac_ref_ptr)
        )
        # dedupe (variable, factor) pairs so duplicate refs count once
        pair = self.ref_var.astype(np.int64) * n_fac + ref_fac
        pair = np.unique(pair)
        adj_var = pair // n_fac
        self.var_fac = (pair % n_fac).astype(np.int32)
        counts = np.bincount(adj_var, minlength=self.n_vars)
        self.var_fac_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    # --- world translation -------------------------------------------------

    def world_dict(self, arr: np.ndarray, graph_index: int | None = None) -> dict:
        s, e = (
            (0, self.n_vars)
            if graph_index is None
            else (self.graph_var_ptr[graph_index], self.graph_var_ptr[graph_index + 1])
        )
        return {
            self.var_ids[i]: self.domains[i][arr[i]] for i in range(int(s), int(e))
        }

    def compile_targets(self, targets):
        """Conjunction targets -> CSR arrays plus an impossibility mask.

        ``targets`` is a list of conjunctions; each conjunct is
        (vid, value, negated). A conjunct over an unknown variable or an
        out-of-domain value makes the whole target impossible (probability 0).
        """
        ptr = [0]
        tvar: list[int] = []
        tval: list[int] = []
        tneg: list[bool] = []
        impossible = np.zeros(len(targets), dtype=bool)
        for ti, conj in enumerate(targets):
            ok = True
            entries = []
            for vid, value, neg in conj:
                vi = self.var_index.get(vid)
                if vi is None or value not in self.value_maps[vi]:
                    ok = False
                    break
                entries.append((vi, self.value_maps[vi][value], neg))
            if not ok:
                impossible[ti] = True
                entries = []
            for vi, vali, neg in entries:
                tvar.append(vi)
                tval.append(vali)
                tneg.append(neg)
            ptr.append(len(tvar))
        return (
            np.asarray(ptr, dtype=np.int64),
            np.asarray(tvar, dtype=np.int32) if tvar else np.zeros(0, np.int32),
            np.asarray(tval, dtype=np.int32) if tval else np.zeros(0, np.int32),
            np.asarray(tneg, dtype=np.uint8) if tneg else np.zeros(0, np.uint8),
            impossible,
        )

    def weights_array(self, store: WeightStore) -> np.ndarray:
        return np.asarray([store[k] for k in self.weight_keys], dtype=np.float64)

    def store_from_array(self, arr: np.ndarray) -> WeightStore:
        return WeightStore.from_items(zip(self.weight_keys, arr.tolist()))


def draws_per_sweep(n_free: int, shuffle: bool) -> int:
    if n_free == 0:
        return 0
    return (n_free - 1 if shuffle else 0) + n_free


def cd1_draws_per_graph(n_vars: int, n_latent: int, shuffle: bool) -> int:
    total = draws_per_sweep(n_vars, shuffle)  # negative-phase sweep
    if n_latent > 0:
        total += n_latent + draws_per_sweep(n_latent, shuffle)  # init + positive sweep
    return total


# --- kernels ----------------------------------------------------------------


@njit(cache=True, nogil=True)
def _factor_val(f, world, fac_scale, fac_ref_ptr, ref_var, ref_val, ref_neg):
    for r in range(fac_ref_ptr[f], fac_ref_ptr[f + 1]):
        match = world[ref_var[r]] == ref_val[r]
        if match == (ref_neg[r] == 1):
            return 0.0
    return fac_scale[f]


@njit(cache=True, nogil=True)
def _resample(
    v,
    world,
    scores,
    dom,
    fac_weight,
    fac_scale,
    fac_ref_ptr,
    ref_var,
    ref_val,
    ref_neg,
    var_fac_ptr,
    var_fac,
    weights,
    u,
):
    """Draw a new value for variable v from its Markov-blanket conditional."""
    k_count = dom[v]
    for k in range(k_count):
        scores[k] = 0.0
    for a in range(var_fac_ptr[v], var_fac_ptr[v + 1]):
        f = var_fac[a]
        w = weights[fac_weight[f]] * fac_scale[f]
        if w == 0.0:
            continue
        for k in range(k_count):
            ok = True
            for r in range(fac_ref_ptr[f], fac_ref_ptr[f + 1]):
                rv = ref_var[r]
                val = k if rv == v else world[rv]
                match = val == ref_val[r]
                if match == (ref_neg[r] == 1):
                    ok = False
                    break
            if ok:
                scores[k] += w
    m = scores[0]
    for k in range(1, k_count):
        if scores[k] > m:
            m = scores[k]
    total = 0.0
    for k in range(k_count):
        scores[k] = np.exp(scores[k] - m)
        total += scores[k]
    t = u * total
    acc = 0.0
    pick = k_count - 1
    for k in range(k_count):
        acc += scores[k]
        if t < acc:
            pick = k
            break
    return pick


@njit(cache=True, nogil=True)
def _shuffle_into(order, n, u, cur):
    for i in range(n - 1, 0, -1):
        j = int(u[cur] * (i + 1))
        cur += 1
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp
    return cur


@njit(cache=True, nogil=True)
def _run_chain(
    world,
    free,
    dom,
    fac_weight,
    fac_scale,
    fac_ref_ptr,
    ref_var,
    ref_val,
    ref_neg,
    var_fac_ptr,
    var_fac,
    weights,
    u,
    shuffle,
    n_sweeps,
    skip,
    tgt_ptr,
    tgt_var,
    tgt_val,
    tgt_neg,
    tallies,
    order,
    scores,
):
    """Run n_sweeps systematic-scan sweeps; tally targets after `skip` sweeps.

    Returns (uniforms consumed, worlds tallied).
    """
    cur = 0
    n = free.shape[0]
    n_targets = tgt_ptr.shape[0] - 1
    kept = 0
    for s in range(n_sweeps):
        for i in range(n):
            order[i] = free[i]
        if shuffle and n > 1:
            cur = _shuffle_into(order, n, u, cur)
        for i in range(n):
            v = order[i]
            world[v] = _resample(
                v,
                world,
                scores,
                dom,
                fac_weight,
                fac_scale,
                fac_ref_ptr,
                ref_var,
                ref_val,
                ref_neg,
                var_fac_ptr,
                var_fac,
                weights,
                u[cur],
            )
            cur += 1
        if s >= skip:
            kept += 1
            for t in range(n_targets):
                ok = True
                for r in range(tgt_ptr[t], tgt_ptr[t + 1]):
                    match = world[tgt_var[r]] == tgt_val[r]
                    if match == (tgt_neg[r] == 1):
                        ok = False
                        break
                if ok:
                    tallies[t] += 1
    return cur, kept


@njit(cache=True, nogil=True)
def _cd1_epoch(
    graph_order,
    graph_var_ptr,
    graph_fac_ptr,
    dom,
    data_vals,
    fac_weight,
    fac_scale,
    fac_ref_ptr,
    ref_var,
    ref_val,
    ref_neg,
    var_fac_ptr,
    var_fac,
    weights,
    eta,
    lam,
    shuffle,
    per_step,
    world,
    u,
    grad,
    touched_mask,
    touched,
    fprime,
    order,
    scores,
):
    """One pass of CD-1 updates over the listed graphs.

    Per graph: clamp the world at the data values, fill and re-sample latent
    slots once (positive phase), record factor values f(I'), run one full
    Gibbs sweep over every variable of the graph (negative phase), then apply
    w_k += eta * sum(f(I') - f(I'')) - eta * 2 * lam * w_k for each weight key
    the graph touches. per_step mode instead updates the keys in a variable's
    blanket right after that variable is re-sampled.

    Returns (uniforms consumed, failed graph position or -1, sum |gradient|).
    """
    cur = 0
    grad_l1 = 0.0
    for gpos in range(graph_order.shape[0]):
        g = graph_order[gpos]
        v0 = graph_var_ptr[g]
        v1 = graph_var_ptr[g + 1]
        f0 = graph_fac_ptr[g]
        f1 = graph_fac_ptr[g + 1]
        n = v1 - v0
        # init at the data world; draw latents uniformly
        n_lat = 0
        for v in range(v0, v1):
            dv = data_vals[v]
            if dv >= 0:
                world[v] = dv
            else:
                world[v] = int(u[cur] * dom[v])
                cur += 1
                n_lat += 1
        # positive phase: one sweep over latents, observed labels clamped
        if n_lat > 0:
            k = 0
            for v in range(v0, v1):
                if data_vals[v] < 0:
                    order[k] = v
                    k += 1
            if shuffle and n_lat > 1:
                cur = _shuffle_into(order, n_lat, u, cur)
            for i in range(n_lat):
                v = order[i]
                world[v] = _resample(
                    v, world, scores, dom, fac_weight, fac_scale, fac_ref_ptr,
                    ref_var, ref_val, ref_neg, var_fac_ptr, var_fac, weights, u[cur],
                )
                cur += 1
        # f(I') for every factor of the graph
        for f in range(f0, f1):
            fprime[f - f0] = _factor_val(
                f, world, fac_scale, fac_ref_ptr, ref_var, ref_val, ref_neg
            )
        # negative phase: one full sweep over all label variables
        for i in range(n):
            order[i] = v0 + i
        if shuffle and n > 1:
            cur = _shuffle_into(order, n, u, cur)
        bad = False
        if per_step == 1:
            for i in range(n):
                v = order[i]
                world[v] = _resample(
                    v, world, scores, dom, fac_weight, fac_scale, fac_ref_ptr,
                    ref_var, ref_val, ref_neg, var_fac_ptr, var_fac, weights, u[cur],
                )
                cur += 1
                t_count = 0
                for a in range(var_fac_ptr[v], var_fac_ptr[v + 1]):
                    f = var_fac[a]
                    key = fac_weight[f]
                    if touched_mask[key] == 0:
                        touched_mask[key] = 1
                        touched[t_count] = key
                        t_count += 1
                    d = fprime[f - f0] - _factor_val(
                        f, world, fac_scale, fac_ref_ptr, ref_var, ref_val, ref_neg
                    )
                    grad[key] += d
                for ti in range(t_count):
                    key = touched[ti]
                    gk = grad[key]
                    wk = weights[key]
                    nw = wk + eta * gk - eta * 2.0 * lam * wk
                    weights[key] = nw
                    grad_l1 += abs(gk)
                    grad[key] = 0.0
                    touched_mask[key] = 0
                    if not np.isfinite(nw):
                        bad = True
                if bad:
                    return cur, gpos, grad_l1
        else:
            for i in range(n):
                v = order[i]
                world[v] = _resample(
                    v, world, scores, dom, fac_weight, fac_scale, fac_ref_ptr,
                    ref_var, ref_val, ref_neg, var_fac_ptr, var_fac, weights, u[cur],
                )
                cur += 1
            t_count = 0
            for f in range(f0, f1):
                key = fac_weight[f]
                if touched_mask[key] == 0:
                    touched_mask[key] = 1
                    touched[t_count] = key
                    t_count += 1
                d = fprime[f - f0] - _factor_val(
                    f, world, fac_scale, fac_ref_ptr, ref_var, ref_val, ref_neg
                )
                grad[key] += d
            for ti in range(t_count):
                key = touched[ti]
                gk = grad[key]
                wk = weights[key]
                nw = wk + eta * gk - eta * 2.0 * lam * wk
                weights[key] = nw
                grad_l1 += abs(gk)
                grad[key] = 0.0
                touched_mask[key] = 0
                if not np.isfinite(nw):
                    bad = True
            if bad:
                return cur, gpos, grad_l1
    return cur, -1, grad_l1


_warmed = False


def warmup_kernels() -> None:
    """Compile the kernels on a toy model so threads never hit the JIT lock."""
    global _warmed
    if _warmed:
        return
    world = np.zeros(2, dtype=np.int32)
    free = np.arange(2, dtype=np.int32)
    dom = np.full(2, 2, dtype=np.int32)
    fac_weight = np.zeros(1, dtype=np.int32)
    fac_scale = np.ones(1, dtype=np.float64)
    fac_ref_ptr = np.array([0, 2], dtype=np.int64)
    ref_var = np.array([0, 1], dtype=np.int32)
    ref_val = np.array([1, 1], dtype=np.int32)
    ref_neg = np.zeros(2, dtype=np.uint8)
    var_fac_ptr = np.array([0, 1, 2], dtype=np.int64)
    var_fac = np.zeros(2, dtype=np.int32)
    weights = np.zeros(1, dtype=np.float64)
    u = np.linspace(0.1, 0.9, 64)
    tgt_ptr = np.array([0, 1], dtype=np.int64)
    tgt_var = np.zeros(1, dtype=np.int32)
    tgt_val = np.ones(1, dtype=np.int32)
    tgt_neg = np.zeros(1, dtype=np.uint8)
    tallies = np.zeros(1, dtype=np.int64)
    order = np.zeros(2, dtype=np.int32)
    scores = np.zeros(2, dtype=np.float64)
    _run_chain(
        world, free, dom, fac_weight, fac_scale, fac_ref_ptr, ref_var, ref_val,
        ref_neg, var_fac_ptr, var_fac, weights, u, True, 3, 1,
        tgt_ptr, tgt_var, tgt_val, tgt_neg, tallies, order, scores,
    )
    graph_order = np.zeros(1, dtype=np.int64)
    graph_var_ptr = np.array([0, 2], dtype=np.int64)
    graph_fac_ptr = np.array([0, 1], dtype=np.int64)
    data_vals = np.array([1, -1], dtype=np.int32)
    grad = np.zeros(1, dtype=np.float64)
    touched_mask = np.zeros(1, dtype=np.uint8)
    touched = np.zeros(1, dtype=np.int32)
    fprime = np.zeros(1, dtype=np.float64)
    for per_step in (0, 1):
        _cd1_epoch(
            graph_order, graph_var_ptr, graph_fac_ptr, dom, data_vals,
            fac_weight, fac_scale, fac_ref_ptr, ref_var, ref_val, ref_neg,
            var_fac_ptr, var_fac, weights, 0.01, 0.01, True, per_step,
            world, u, grad, touched_mask, touched, fprime, order, scores,
        )
    _warmed = True
