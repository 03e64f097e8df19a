"""Log-linear model semantics and the exact enumeration oracle.

A possible world assigns a value to every variable of one graph. The
unnormalized log weight of a world is sum(w_k * f_k(world)) over the graph's
factors; probabilities divide by the partition sum over all worlds.

The oracle enumerates worlds directly: observed variables (continuous
evidence and observed discrete labels) stay clamped, free discrete variables
range over their domains. All accumulation is in log domain. This is a
desk-scale verification tool, deliberately brute force so it shares no code
with the Gibbs sampler.
"""

from __future__ import annotations

import itertools
import math

from .errors import TooLargeToEnumerate, UnassignedVariable
from .grounder import FactorGraph, FactorInstance, VariableDecl, WeightStore

ENUMERATION_LIMIT = 2**25

PossibleWorld = dict  # variable id -> value


def factor_value(factor: FactorInstance, world: PossibleWorld) -> float:
    """Value of one factor in one world.

    Indicator factors return their constant iff every referenced literal
    matches its required value modulo negation, else 0. Linear factors
    multiply the indicator by the referenced feature value. Constant factors
    always return their constant.
    """
    for vid, want, neg in zip(factor.var_refs, factor.required_values, factor.negated):
        try:
            have = world[vid]
        except KeyError:
            raise UnassignedVariable(f"world does not assign {vid}") from None
        if (have == want) == neg:
            return 0.0
    if factor.kind == "linear":
        try:
            return float(world[factor.feature_ref])
        except KeyError:
            raise UnassignedVariable(
                f"world does not assign feature {factor.feature_ref}"
            ) from None
    return factor.constant


def log_weight(graph: FactorGraph, world: PossibleWorld, weights: WeightStore) -> float:
    """The exponent of the unnormalized world weight: sum of w_k * f_k."""
    total = 0.0
    for f in graph.factors:
        v = factor_value(f, world)
        if v != 0.0:
            total += weights[f.weight_key] * v
    return total


def _free_variables(graph: FactorGraph) -> list[VariableDecl]:
    return graph.free_variables()


def _check_enumerable(free: list[VariableDecl]) -> None:
    count = 1
    for v in free:
        count *= len(v.values())
        if count > ENUMERATION_LIMIT:
            raise TooLargeToEnumerate(
                f"more than {ENUMERATION_LIMIT} worlds to enumerate"
            )


def clamped_world(graph: FactorGraph) -> PossibleWorld:
    """The evidence part of a world: every observed variable at its value."""
    return {v.vid: v.observed for v in graph.variables if v.observed is not None}


def iter_worlds(graph: FactorGraph):
    """Yield every possible world consistent with the evidence."""
    free = _free_variables(graph)
    _check_enumerable(free)
    base = clamped_world(graph)
    domains = [v.values() for v in free]
    ids = [v.vid for v in free]
    for combo in itertools.product(*domains):
        world = dict(base)
        world.update(zip(ids, combo))
        yield world


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def exact_log_partition(graph: FactorGraph, weights: WeightStore) -> float:
    """log of the sum over all worlds of exp(log_weight), via log-sum-exp."""
    total = -math.inf
    for world in iter_worlds(graph):
        total = _logaddexp(total, log_weight(graph, world, weights))
    return total


def violates_evidence(graph: FactorGraph, world: PossibleWorld) -> bool:
    return any(
        v.observed is not None and world.get(v.vid) != v.observed
        for v in graph.variables
    )


def exact_world_probability(
    graph: FactorGraph, world: PossibleWorld, weights: WeightStore
) -> float:
    """Pr[world] given the evidence; exactly 0 for evidence-violating worlds."""
    for v in graph.variables:
        if v.vid not in world:
            raise UnassignedVariable(f"world does not assign {v.vid}")
    if violates_evidence(graph, world):
        return 0.0
    return math.exp(log_weight(graph, world, weights) - exact_log_partition(graph, weights))


def exact_query_marginal(graph: FactorGraph, query_fn, weights: WeightStore) -> float:
    """Probability that a world indicator holds: sum of indicator * Pr[world].

    ``query_fn`` maps a complete world to a truthy value.
    """
    z = -math.inf
    hit = -math.inf
    for world in iter_worlds(graph):
        lw = log_weight(graph, world, weights)
        z = _logaddexp(z, lw)
        if query_fn(world):
            hit = _logaddexp(hit, lw)
    return math.exp(hit - z)


def exact_marginals(graph: FactorGraph, weights: WeightStore) -> dict:
    """All single-variable marginals {(vid, value): probability} in one sweep."""
    logz = exact_log_partition(graph, weights)
    acc: dict = {}
    for world in iter_worlds(graph):
        p = math.exp(log_weight(graph, world, weights) - logz)
        for v in graph.variables:
            if v.kind == "continuous":
                continue
            key = (v.vid, world[v.vid])
            acc[key] = acc.get(key, 0.0) + p
    return acc


def exact_conditional(
    graph: FactorGraph, world: PossibleWorld, vid, weights: WeightStore
) -> dict:
    """P(var = value | all other variables at their world values).

    Computed from full-graph log weights, independent of the Markov-blanket
    shortcut used by the sampler.
    """
    var = graph.variable(vid)
    scores = {}
    for value in var.values():
        candidate = dict(world)
        candidate[vid] = value
        scores[value] = log_weight(graph, candidate, weights)
    m = max(scores.values())
    exps = {value: math.exp(s - m) for value, s in scores.items()}
    z = sum(exps.values())
    return {value: e / z for value, e in exps.items()}


def exact_expected_factor_sums(graph: FactorGraph, weights: WeightStore) -> dict:
    """E[sum of f over instances sharing a key], keyed by weight key.

    The exact model expectation of each tied factor's total value; the
    analytic gradient of the negative log likelihood for one graph is
    E[f_k] - f_k(data world).
    """
    logz = exact_log_partition(graph, weights)
    acc: dict = {}
    for world in iter_worlds(graph):
        p = math.exp(log_weight(graph, world, weights) - logz)
        for f in graph.factors:
            v = factor_value(f, world)
            if v != 0.0:
                acc[f.weight_key] = acc.get(f.weight_key, 0.0) + p * v
    return acc
