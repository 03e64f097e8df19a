"""Direct factor-graph builders for benchmarks and randomized fixtures.

These bypass the table/rule pipeline and construct graph objects directly:
the throughput benchmark wants many disconnected replicas of one template
with tied weights (the shape real groundings have), and randomized tests
want small arbitrary graphs with known structure.
"""

from __future__ import annotations

import numpy as np

from .grounder import FactorGraph, FactorInstance, VariableDecl, WeightKey, WeightStore


def random_graph(
    n_vars: int,
    n_factors: int,
    rng: np.random.Generator,
    weight_range: tuple[float, float] = (-2.0, 2.0),
    p_multinomial: float = 0.0,
    max_levels: int = 3,
    p_observed: float = 0.0,
    sample_id: int = 0,
) -> tuple[FactorGraph, WeightStore]:
    """One random graph; each factor gets its own weight key."""
    variables = []
    for i in range(n_vars):
        if rng.random() < p_multinomial:
            k = int(rng.integers(2, max_levels + 1))
            domain = tuple(f"v{j}" for j in range(k))
            observed = domain[int(rng.integers(k))] if rng.random() < p_observed else None
            variables.append(
                VariableDecl(
                    vid=(sample_id, "m", (i,)),
                    kind="multinomial",
                    domain=domain,
                    observed=observed,
                )
            )
        else:
            observed = bool(rng.integers(2)) if rng.random() < p_observed else None
            variables.append(
                VariableDecl(vid=(sample_id, "b", (i,)), kind="boolean", observed=observed)
            )
    factors = []
    lo, hi = weight_range
    weights = {}
    for fi in range(n_factors):
        arity = int(rng.integers(1, min(3, n_vars) + 1))
        picks = rng.choice(n_vars, size=arity, replace=False)
        refs, values, negs = [], [], []
        for p in picks:
            v = variables[int(p)]
            refs.append(v.vid)
            if v.kind == "boolean":
                values.append(True)
            else:
                values.append(v.domain[int(rng.integers(len(v.domain)))])
            negs.append(bool(rng.integers(2)))
        key = WeightKey(rule_id=0, terms=(str(fi),))
        weights[key] = float(rng.uniform(lo, hi))
        factors.append(
            FactorInstance(
                weight_key=key,
                kind="indicator",
                var_refs=tuple(refs),
                required_values=tuple(values),
                negated=tuple(negs),
                constant=1.0,
            )
        )
    graph = FactorGraph(sample_id=sample_id, variables=variables, factors=factors)
    return graph, WeightStore.from_items(weights.items())


def tied_boolean_graphs(
    n_graphs: int,
    vars_per_graph: int,
    degree: int,
    weight_scale: float,
    seed: int,
) -> tuple[list[FactorGraph], WeightStore]:
    """Disconnected replicas of one random pairwise template, weights tied.

    Every variable appears in about `degree` pairwise indicator factors; the
    factor at template position j shares weight key j across all graphs.
    """
    rng = np.random.default_rng(seed)
    n_edges = max(1, (vars_per_graph * degree) // 2)
    edges = []
    for j in range(n_edges):
        a = int(rng.integers(vars_per_graph))
        b = int(rng.integers(vars_per_graph - 1))
        if b >= a:
            b += 1
        edges.append((a, b, bool(rng.integers(2)), bool(rng.integers(2))))
    keys = [WeightKey(rule_id=0, terms=(str(j),)) for j in range(n_edges)]
    values = rng.uniform(-weight_scale, weight_scale, size=n_edges)
    store = WeightStore.from_items(zip(keys, values))
    graphs = []
    for s in range(n_graphs):
        variables = [
            VariableDecl(vid=(s, "b", (i,)), kind="boolean") for i in range(vars_per_graph)
        ]
        factors = [
            FactorInstance(
                weight_key=keys[j],
                kind="indicator",
                var_refs=((s, "b", (a,)), (s, "b", (b,))),
                required_values=(True, True),
                negated=(na, nb),
                constant=1.0,
            )
            for j, (a, b, na, nb) in enumerate(edges)
        ]
        graphs.append(FactorGraph(sample_id=s, variables=variables, factors=factors))
    return graphs, store
