import math

import pytest

from kbc.errors import (
    DomainUnresolvable,
    RuleSyntaxError,
    UnboundAnswerVariable,
    UnknownFamily,
    UnknownSample,
)
from kbc.factorgraph import exact_query_marginal, exact_marginals
from kbc.grounder import ground
from kbc.kbio import KnowledgeBase
from kbc.predicates import build_registry, haversine_km
from kbc.query import (
    answer,
    bind_candidates,
    classify,
    parse_query,
    tuple_marginal,
)
from kbc.rulelang import Constant, Variable, parse_rule_file
from kbc.sampler import SamplerConfig

from conftest import make_db

RULES = """
{(i,w(a),1) | hasAttribute(i,a)}
{((i,a,b),w(a,b),1) | hasAttribute(i,a) & hasAttribute(i,b)}
{(i,w(c),1) | sceneCategory(i,c)}
"""


def build_kb(weight_values=None, observed_warm=(None, None, None)):
    att_rows = []
    for s in range(3):
        att_rows.append((s, "sunny", None))
        att_rows.append((s, "warm", observed_warm[s]))
    db = make_db(
        dict(
            name="sceneCategory",
            columns=(("sample_id", "integer"), ("value", "text")),
            keys=("sample_id",),
            rows=[(s, None) for s in range(3)],
            domain=("beach", "forest"),
        ),
        dict(
            name="hasAttribute",
            columns=(("sample_id", "integer"), ("label", "text"), ("value", "boolean")),
            keys=("sample_id", "label"),
            rows=att_rows,
        ),
        dict(
            name="hasLocation",
            columns=(("sample_id", "integer"), ("latlong", "text")),
            keys=("sample_id",),
            role="metadata",
            rows=[(0, "0.0,0.0"), (1, "0.004,0.0"), (2, "0.045,0.0")],
        ),
        dict(
            name="geoName",
            columns=(("name", "text"), ("latlong", "text")),
            keys=("name",),
            role="metadata",
            rows=[("Origin", "0.0,0.0")],
        ),
    )
    rules = parse_rule_file(RULES)
    registry = build_registry(db)
    graphs, weights = ground(rules, db, registry=registry)
    for key, value in (weight_values or {}).items():
        for k in weights.sorted_keys():
            if (k.rule_id, k.terms) == key:
                weights[k] = value
    return KnowledgeBase(db=db, rules=rules, registry=registry, graphs=graphs, weights=weights)


CFG = SamplerConfig(burn_in_sweeps=50, sweeps=4000, seed=17)


def test_parse_query_beach_sunny():
    q = parse_query(
        'sceneCategory(i, "beach")\nhasAttribute(i, "sunny")\n=> answer(i)\n'
    )
    assert len(q.literals) == 2
    assert q.answer_terms == (Variable("i"),)
    assert q.literals[0].args[1] == Constant("beach")


def test_parse_query_errors():
    with pytest.raises(RuleSyntaxError):
        parse_query('hasAttribute(i, "sunny")\n')  # no answer line
    with pytest.raises(UnboundAnswerVariable):
        parse_query('hasAttribute(i, "sunny")\n=> answer(j)\n')
    with pytest.raises(RuleSyntaxError):
        parse_query('hasAttribute(i, "sunny"\n=> answer(i)\n')


def test_haversine_hand_values():
    # 0.004 deg of latitude = 0.004 * pi/180 * 6371 km
    d = haversine_km((0.0, 0.0), (0.004, 0.0))
    assert d == pytest.approx(0.004 * math.pi / 180 * 6371.0, rel=1e-9)
    assert d < 1.0
    assert haversine_km((0.0, 0.0), (0.045, 0.0)) > 5.0


def test_bind_near_by_filters():
    kb = build_kb()
    q = parse_query(
        'hasAttribute(img, "sunny")\n'
        "hasLocation(img, l1)\n"
        'geoName("Origin", l2)\n'
        'nearBy(l1, l2, "1km")\n'
        "=> answer(img)\n"
    )
    candidates = bind_candidates(q, kb)
    assert sorted(c["img"] for c in candidates) == [0, 1]  # sample 2 is 5 km out


def test_bind_unsatisfiable_deterministic():
    kb = build_kb()
    q = parse_query(
        'geoName("Nowhere", l)\nhasAttribute(img, "sunny")\nhasLocation(img, l)\n=> answer(img)\n'
    )
    assert bind_candidates(q, kb) == []


def test_bind_pure_probabilistic_one_per_image():
    kb = build_kb()
    q = parse_query('hasAttribute(img, "sunny")\n=> answer(img)\n')
    candidates = bind_candidates(q, kb)
    assert [c["img"] for c in candidates] == [0, 1, 2]


def test_tuple_marginal_trivia():
    kb = build_kb(observed_warm=(True, None, None))
    det_only = parse_query('hasLocation(img, l)\n=> answer(img)\n')
    binding = bind_candidates(det_only, kb)[0]
    assert tuple_marginal(det_only, binding, kb, CFG) == 1.0

    contra = parse_query('!hasAttribute(img, "warm")\nhasLocation(img, l)\n=> answer(img)\n')
    b0 = [c for c in bind_candidates(contra, kb) if c["img"] == 0][0]
    assert tuple_marginal(contra, b0, kb, CFG) == 0.0


def test_tuple_marginal_matches_oracle():
    kb = build_kb(
        weight_values={(0, ("sunny",)): 0.7, (1, ("sunny", "warm")): -1.1, (2, ("beach",)): 0.4}
    )
    q = parse_query(
        'hasAttribute(img, "sunny")\nsceneCategory(img, "beach")\n=> answer(img)\n'
    )
    binding = [c for c in bind_candidates(q, kb) if c["img"] == 1][0]
    graph = kb.graph_for(1)

    def indicator(w):
        return w[(1, "hasAttribute", ("sunny",))] is True and w[(1, "sceneCategory", ())] == "beach"

    want = exact_query_marginal(graph, indicator, kb.weights)
    got = tuple_marginal(q, binding, kb, SamplerConfig(burn_in_sweeps=100, sweeps=60000, seed=5))
    assert got == pytest.approx(want, abs=0.01)


def test_answer_order_matches_oracle():
    # warm clamped true on sample 0, false on sample 1, latent on sample 2:
    # three distinct oracle marginals for sunny under the tied correlation
    kb = build_kb(
        weight_values={(0, ("sunny",)): -1.4, (1, ("sunny", "warm")): 3.6},
        observed_warm=(True, False, None),
    )
    q = parse_query('hasAttribute(img, "sunny")\n=> answer(img)\n')
    res = answer(q, kb, SamplerConfig(burn_in_sweeps=100, sweeps=20000, seed=2))
    assert [a.values[0] for a in res][0] == 0  # sigma(2.2) = 0.90 ranks first
    sig = lambda x: 1 / (1 + math.exp(-x))
    assert res[0].probability == pytest.approx(sig(2.2), abs=0.02)
    by_img = {a.values[0]: a.probability for a in res}
    assert by_img[1] == pytest.approx(sig(-1.4), abs=0.02)

    oracle = {}
    for s in range(3):
        g = kb.graph_for(s)
        oracle[s] = exact_query_marginal(
            g, lambda w, s=s: w[(s, "hasAttribute", ("sunny",))] is True, kb.weights
        )
    oracle_order = sorted(oracle, key=lambda s: (-oracle[s], str(s)))
    assert [a.values[0] for a in res] == oracle_order


def test_answer_empty_and_prefix():
    kb = build_kb()
    q = parse_query(
        'geoName("Nowhere", l)\nhasLocation(img, l)\nhasAttribute(img, "sunny")\n=> answer(img)\n'
    )
    assert answer(q, kb, CFG) == []

    q2 = parse_query('hasAttribute(img, "sunny")\n=> answer(img)\n')
    full = answer(q2, kb, CFG, top_k=3)
    partial = answer(q2, kb, CFG, top_k=2)
    assert partial == full[:2]


def test_answer_tie_break_lexicographic():
    kb = build_kb()  # all weights zero: every marginal is exactly symmetric
    q = parse_query('hasAttribute(img, "sunny")\nhasLocation(img, l)\n=> answer(img, l)\n')
    res = answer(q, kb, SamplerConfig(burn_in_sweeps=10, sweeps=100, seed=4))
    probs = [a.probability for a in res]
    for i in range(len(res) - 1):
        if probs[i] == probs[i + 1]:
            assert [str(v) for v in res[i].values] <= [str(v) for v in res[i + 1].values]


def test_deterministic_filter_soundness():
    kb = build_kb()
    q = parse_query(
        'hasAttribute(img, "sunny")\n'
        "hasLocation(img, l1)\n"
        'geoName("Origin", l2)\n'
        'nearBy(l1, l2, "1km")\n'
        "=> answer(img)\n"
    )
    res = answer(q, kb, CFG)
    assert {a.values[0] for a in res} <= {0, 1}  # sample 2 violates nearBy


def test_conjunction_bound():
    kb = build_kb(
        weight_values={(0, ("sunny",)): 0.6, (0, ("warm",)): -0.4, (1, ("sunny", "warm")): 0.8}
    )
    cfg = SamplerConfig(burn_in_sweeps=100, sweeps=30000, seed=6)
    q_and = parse_query('hasAttribute(img, "sunny")\nhasAttribute(img, "warm")\n=> answer(img)\n')
    q_a = parse_query('hasAttribute(img, "sunny")\n=> answer(img)\n')
    q_b = parse_query('hasAttribute(img, "warm")\n=> answer(img)\n')
    p_and = {a.values[0]: a.probability for a in answer(q_and, kb, cfg)}
    p_a = {a.values[0]: a.probability for a in answer(q_a, kb, cfg)}
    p_b = {a.values[0]: a.probability for a in answer(q_b, kb, cfg)}
    for img in p_and:
        assert p_and[img] <= min(p_a[img], p_b[img]) + 0.02


def test_classify_multinomial_and_boolean():
    kb = build_kb(weight_values={(2, ("beach",)): 1.0})
    ranked = classify(1, "sceneCategory", kb, SamplerConfig(burn_in_sweeps=100, sweeps=30000, seed=8))
    assert ranked[0][0] == "beach"
    total = sum(p for _, p in ranked)
    assert total == pytest.approx(1.0, abs=1e-9)
    e = math.exp(1.0)
    assert ranked[0][1] == pytest.approx(e / (e + 1), abs=0.02)

    want = exact_marginals(kb.graph_for(1), kb.weights)
    got = classify(1, "hasAttribute", kb, SamplerConfig(burn_in_sweeps=100, sweeps=30000, seed=9))
    for label, p in got:
        assert p == pytest.approx(
            want[((1, "hasAttribute", (label,)), True)], abs=0.01
        )

    with pytest.raises(UnknownSample):
        classify(99, "hasAttribute", kb, CFG)
    with pytest.raises(UnknownFamily):
        classify(1, "geoName", kb, CFG)


def test_classify_single_level_family():
    db = make_db(
        dict(
            name="kindOf",
            columns=(("sample_id", "integer"), ("value", "text")),
            keys=("sample_id",),
            rows=[(0, None)],
            domain=("only",),
        )
    )
    rules = parse_rule_file("{(i,w(c),1) | kindOf(i,c)}")
    registry = build_registry(db)
    graphs, weights = ground(rules, db, registry=registry)
    kb = KnowledgeBase(db=db, rules=rules, registry=registry, graphs=graphs, weights=weights)
    ranked = classify(0, "kindOf", kb, CFG)
    assert ranked == [("only", 1.0)]


def test_classify_three_class_recovers_generating_class(tmp_path):
    """Strongly separated per-class feature weights: the classify argmax
    matches the class each test image was sampled with on >=95% of images."""
    mag = 20.0
    vals = {}
    for k, cls in enumerate(("c0", "c1", "c2")):
        theta = 2 * math.pi * k / 3
        vals[f"{cls}|0"] = round(mag * math.cos(theta), 3)
        vals[f"{cls}|1"] = round(mag * math.sin(theta), 3)
    spec = {
        "seed": 41,
        "samples": 60,
        "sampling": "exact",
        "holdout_fraction": 1.0,
        "families": [
            {"name": "sceneCategory", "kind": "multinomial", "labels": ["c0", "c1", "c2"]}
        ],
        "feature_dims": 2,
        "rules": [
            {"text": "{(i,w(c),1) | sceneCategory(i,c)}", "weight_range": [0.0, 0.0]},
            {
                "text": "{(i,w(c,d),f) | sceneCategory(i,c) & hasFeature(i,d,f)}",
                "weight_values": vals,
            },
        ],
    }
    from kbc.kbio import build_kb, load_weights
    from kbc.synth import generate

    generate(spec, tmp_path)
    kb2, _ = build_kb(tmp_path, tmp_path / "rules.kbr")
    truth_w = load_weights(tmp_path / "truth_weights.tsv")
    for k in kb2.weights.sorted_keys():
        kb2.weights[k] = truth_w[k]
    truth_labels = {}
    for line in (tmp_path / "truth_labels.csv").read_text().splitlines()[1:]:
        s, fam, lab, v = line.split(",")
        truth_labels[int(s)] = v
    cfg = SamplerConfig(burn_in_sweeps=100, sweeps=3000, seed=5)
    hits = sum(
        classify(s, "sceneCategory", kb2, cfg)[0][0] == truth_labels[s]
        for s in kb2.sample_ids
    )
    assert hits / len(kb2.sample_ids) >= 0.95


def test_negated_deterministic_requires_bound_args():
    kb = build_kb()
    q = parse_query('!geoName(name, l)\nhasAttribute(img, "sunny")\n=> answer(img)\n')
    with pytest.raises(DomainUnresolvable):
        bind_candidates(q, kb)
