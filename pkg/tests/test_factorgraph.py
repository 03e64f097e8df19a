import math

import numpy as np
import pytest

from kbc.errors import TooLargeToEnumerate, UnassignedVariable
from kbc.factorgraph import (
    exact_log_partition,
    exact_marginals,
    exact_query_marginal,
    exact_world_probability,
    factor_value,
    iter_worlds,
    log_weight,
)
from kbc.grounder import (
    FactorGraph,
    FactorInstance,
    VariableDecl,
    WeightKey,
    WeightStore,
)
from kbc.synthgraphs import random_graph


def bool_var(i, observed=None, sample=0):
    return VariableDecl(vid=(sample, "b", (i,)), kind="boolean", observed=observed)


def indicator(key, refs, values, negs, constant=1.0):
    return FactorInstance(
        weight_key=key,
        kind="indicator",
        var_refs=tuple(refs),
        required_values=tuple(values),
        negated=tuple(negs),
        constant=constant,
    )


K = WeightKey(0, ("k",))


def single_bool_graph(w=0.0):
    g = FactorGraph(
        sample_id=0,
        variables=[bool_var(0)],
        factors=[indicator(K, [(0, "b", (0,))], [True], [False])],
    )
    return g, WeightStore.from_items([(K, w)])


def test_factor_value_cooccurrence():
    travel, sunny = (0, "aff", ("travel",)), (0, "att", ("sunny",))
    f = indicator(K, [travel, sunny], [True, True], [False, False])
    assert factor_value(f, {travel: True, sunny: True}) == 1.0
    assert factor_value(f, {travel: True, sunny: False}) == 0.0
    with pytest.raises(UnassignedVariable):
        factor_value(f, {travel: True})


def test_factor_value_linear():
    label, feat = (0, "att", ("sunny",)), (0, "hasFeature", (3,))
    f = FactorInstance(
        weight_key=K,
        kind="linear",
        var_refs=(label,),
        required_values=(True,),
        negated=(False,),
        feature_ref=feat,
    )
    assert factor_value(f, {label: True, feat: 0.73}) == pytest.approx(0.73)
    assert factor_value(f, {label: False, feat: 0.73}) == 0.0


def test_log_weight_trivial():
    g = FactorGraph(sample_id=0, variables=[bool_var(0)], factors=[])
    assert log_weight(g, {(0, "b", (0,)): True}, WeightStore()) == 0.0
    g, store = single_bool_graph(0.5)
    assert log_weight(g, {(0, "b", (0,)): True}, store) == pytest.approx(0.5)


def test_log_weight_matches_recomputation(rng):
    graph, store = random_graph(6, 10, rng)
    for world in list(iter_worlds(graph))[:16]:
        expect = math.fsum(
            store[f.weight_key] * factor_value(f, world) for f in graph.factors
        )
        assert abs(log_weight(graph, world, store) - expect) < 1e-12


def test_partition_single_boolean():
    g, store = single_bool_graph(0.0)
    assert exact_log_partition(g, store) == pytest.approx(math.log(2))
    for w in (-3.0, -0.5, 0.0, 0.7, 2.5, 30.0, -30.0):
        g, store = single_bool_graph(w)
        assert exact_log_partition(g, store) == pytest.approx(
            np.logaddexp(0.0, w), abs=1e-12
        )
        assert math.isfinite(exact_log_partition(g, store))


def test_enumeration_guard():
    variables = [bool_var(i) for i in range(26)]
    g = FactorGraph(sample_id=0, variables=variables, factors=[])
    with pytest.raises(TooLargeToEnumerate):
        exact_log_partition(g, WeightStore())


def test_world_probability_symmetry_and_sum():
    g, store = single_bool_graph(0.0)
    assert exact_world_probability(g, {(0, "b", (0,)): True}, store) == pytest.approx(0.5)
    assert exact_world_probability(g, {(0, "b", (0,)): False}, store) == pytest.approx(0.5)


def test_probabilities_sum_to_one(rng):
    graph, store = random_graph(8, 14, rng)
    total = sum(exact_world_probability(graph, w, store) for w in iter_worlds(graph))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_probability_matches_independent_enumeration(rng):
    """Cross-check Pr[world] against a test-local evaluator."""
    graph, store = random_graph(8, 14, rng)

    def my_factor_value(f, world):
        ok = all(
            (world[v] == val) != neg
            for v, val, neg in zip(f.var_refs, f.required_values, f.negated)
        )
        return f.constant if ok else 0.0

    weights = {f.weight_key: store[f.weight_key] for f in graph.factors}
    zs = {}
    for world in iter_worlds(graph):
        key = tuple(sorted(world.items()))
        zs[key] = math.exp(
            sum(weights[f.weight_key] * my_factor_value(f, world) for f in graph.factors)
        )
    z = sum(zs.values())
    for world in iter_worlds(graph):
        key = tuple(sorted(world.items()))
        assert exact_world_probability(graph, world, store) == pytest.approx(
            zs[key] / z, rel=1e-9
        )


def test_query_marginal_trivia(rng):
    graph, store = random_graph(6, 8, rng, p_observed=0.4)
    assert exact_query_marginal(graph, lambda w: True, store) == pytest.approx(1.0)
    observed = [v for v in graph.variables if v.observed is not None]
    if observed:
        v = observed[0]
        contra = lambda w: w[v.vid] != v.observed
        assert exact_query_marginal(graph, contra, store) == pytest.approx(0.0)


def test_query_marginal_hand_enumeration():
    # six booleans, a chain of pairwise agreements; P(b0=true) by hand sum
    variables = [bool_var(i) for i in range(6)]
    factors = []
    store_items = []
    for i in range(5):
        key = WeightKey(0, (str(i),))
        store_items.append((key, 0.4))
        factors.append(
            indicator(key, [(0, "b", (i,)), (0, "b", (i + 1,))], [True, True], [False, False])
        )
    graph = FactorGraph(sample_id=0, variables=variables, factors=factors)
    store = WeightStore.from_items(store_items)

    num = den = 0.0
    import itertools

    for combo in itertools.product([False, True], repeat=6):
        e = sum(0.4 for i in range(5) if combo[i] and combo[i + 1])
        z = math.exp(e)
        den += z
        if combo[0]:
            num += z
    got = exact_query_marginal(graph, lambda w: w[(0, "b", (0,))], store)
    assert got == pytest.approx(num / den, abs=1e-12)
    marg = exact_marginals(graph, store)
    assert marg[((0, "b", (0,)), True)] == pytest.approx(num / den, abs=1e-12)


def test_monotonicity_in_weight():
    last = 0.0
    for w in (0.0, 0.5, 1.0, 2.0):
        g, store = single_bool_graph(w)
        p = exact_world_probability(g, {(0, "b", (0,)): True}, store)
        assert p > last or w == 0.0
        last = p


def test_evidence_clamping():
    v = bool_var(0, observed=True)
    g = FactorGraph(sample_id=0, variables=[v], factors=[])
    store = WeightStore()
    assert exact_world_probability(g, {v.vid: False}, store) == 0.0
    assert exact_world_probability(g, {v.vid: True}, store) == pytest.approx(1.0)
    worlds = list(iter_worlds(g))
    assert worlds == [{v.vid: True}]


def test_log_domain_stability(rng):
    graph, store = random_graph(10, 20, rng, weight_range=(-30.0, 30.0))
    logz = exact_log_partition(graph, store)
    assert math.isfinite(logz)
    for world in list(iter_worlds(graph))[:4]:
        p = exact_world_probability(graph, world, store)
        assert 0.0 <= p <= 1.0
