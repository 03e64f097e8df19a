import pytest
from hypothesis import given, strategies as st

from kbc.errors import ArityMismatch, RuleSyntaxError, UnboundVariable, UnknownPredicate
from kbc.predicates import build_registry
from kbc.rulelang import (
    Constant,
    Literal,
    RuleAst,
    Variable,
    parse_rule,
    parse_rule_file,
    pretty_print,
    validate_rules,
)

from conftest import two_sample_db

COOC = "{(i,w(a1,a2),1) | hasAffordance(i,a1) & hasAttribute(i,a2)}"


def test_parse_cooccurrence_rule():
    ast = parse_rule(COOC)
    assert ast.key_vars == ("i",)
    assert ast.weight_terms == (Variable("a1"), Variable("a2"))
    assert ast.factor_expr == Constant(1.0)
    assert len(ast.body) == 2
    assert all(not lit.negated for lit in ast.body)
    assert ast.body[0].predicate == "hasAffordance"


def test_parse_linear_feature_rule():
    ast = parse_rule("{(i,w(d),f) | sceneCategory(i,c) & hasFeature(i,d,f)}")
    assert ast.factor_expr == Variable("f")
    assert ast.body[1].args == (Variable("i"), Variable("d"), Variable("f"))


def test_syntax_error_position():
    with pytest.raises(RuleSyntaxError) as exc:
        parse_rule("{(i,w(a),1) | hasAffordance(i,}")
    assert exc.value.line == 1
    assert exc.value.column == 31


def test_unicode_conjunction_and_tuple_key():
    ast = parse_rule("{((i,a,b),w(a,b),1) | p(i,a) ∧ q(i,b)}")
    assert ast.key_vars == ("i", "a", "b")
    assert len(ast.body) == 2


def test_negation_and_constants():
    ast = parse_rule('{(i,w(c,"bias"),1) | !sceneCategory(i,c)}')
    assert ast.body[0].negated
    assert ast.weight_terms[1] == Constant("bias")


def test_unbound_weight_variable():
    with pytest.raises(UnboundVariable):
        parse_rule("{(i,w(z),1) | hasAffordance(i,a)}")


def test_unbound_factor_variable():
    with pytest.raises(UnboundVariable):
        parse_rule("{(i,w(a),g) | hasAffordance(i,a)}")


def test_within_rule_arity_consistency():
    with pytest.raises(ArityMismatch):
        parse_rule("{(i,w(a),1) | p(i,a) & p(i,a,b)}")


def test_parse_rule_file_scene_rules(scene_rules_path):
    rules = parse_rule_file(scene_rules_path.read_text())
    assert len(rules) == 18
    assert [r.rule_id for r in rules] == list(range(18))


def test_parse_rule_file_empty_and_comments():
    assert parse_rule_file("") == []
    assert parse_rule_file("# nothing here\n\n# more\n") == []


def test_parse_rule_file_reports_bad_line():
    text = COOC + "\n" + COOC + "\n" + "{(i,w(a),1) | broken(i,}\n"
    with pytest.raises(RuleSyntaxError) as exc:
        parse_rule_file(text)
    assert exc.value.line == 3


def test_pretty_print_fixed_point(scene_rules_path):
    for rule in parse_rule_file(scene_rules_path.read_text()):
        printed = pretty_print(rule)
        assert parse_rule(printed) == rule
        assert pretty_print(parse_rule(printed)) == printed


def test_pretty_print_details():
    assert pretty_print(parse_rule(COOC)).endswith("| hasAffordance(i, a1) & hasAttribute(i, a2)}")
    assert ", 1) |" in pretty_print(parse_rule(COOC))
    neg = parse_rule("{(i,w(a),1) | !hasAffordance(i,a)}")
    assert "!hasAffordance" in pretty_print(neg)


def test_determinism():
    assert parse_rule(COOC) == parse_rule(COOC)
    err = []
    for _ in range(2):
        try:
            parse_rule("{(i,w(a),1) | p(i,}")
        except RuleSyntaxError as exc:
            err.append((exc.line, exc.column))
    assert err[0] == err[1]


# --- AST generator round trip ------------------------------------------

_names = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True)
_numbers = st.one_of(
    st.integers(-99, 99).map(float),
    st.floats(-50, 50, allow_nan=False, allow_infinity=False).map(
        lambda x: float(round(x, 3))
    ),
)
_terms = st.one_of(
    _names.map(Variable),
    st.text(st.characters(codec="ascii", exclude_characters='"\\\n'), max_size=6).map(
        Constant
    ),
    _numbers.map(Constant),
)


@st.composite
def rule_asts(draw):
    n_lits = draw(st.integers(1, 3))
    body = []
    bound = set()
    for _ in range(n_lits):
        pred = draw(_names)
        args = draw(st.lists(_terms, min_size=1, max_size=3))
        # keep per-rule arity consistent: suffix the name by arity
        pred = f"{pred}_{len(args)}"
        body.append(Literal(negated=draw(st.booleans()), predicate=pred, args=tuple(args)))
        bound |= {t.name for t in args if isinstance(t, Variable)}
    if not bound:
        v = draw(_names)
        body[0] = Literal(
            negated=body[0].negated,
            predicate=body[0].predicate.rsplit("_", 1)[0] + f"_{len(body[0].args)}",
            args=body[0].args[:-1] + (Variable(v),),
        )
        bound = {v}
    bound = sorted(bound)
    key_vars = tuple(draw(st.lists(st.sampled_from(bound), min_size=1, max_size=2, unique=True)))
    weight_terms = tuple(
        draw(
            st.lists(
                st.one_of(st.sampled_from(bound).map(Variable), _numbers.map(Constant)),
                min_size=1,
                max_size=3,
            )
        )
    )
    factor = draw(st.one_of(_numbers.map(Constant), st.sampled_from(bound).map(Variable)))
    return RuleAst(
        key_vars=key_vars, weight_terms=weight_terms, factor_expr=factor, body=tuple(body)
    )


@given(rule_asts())
def test_roundtrip_property(ast):
    assert parse_rule(pretty_print(ast)) == ast


# --- validation ----------------------------------------------------------


def test_validate_scene_rules_clean(scene_dir, scene_rules_path):
    from kbc.datastore import load_data_dir

    db = load_data_dir(scene_dir)
    rules = parse_rule_file(scene_rules_path.read_text())
    report = validate_rules(rules, build_registry(db))
    assert report.ok, report.issues


def test_validate_unknown_predicate():
    db = two_sample_db()
    rules = parse_rule_file("{(i,w(a),1) | foo(i,a)}")
    report = validate_rules(rules, build_registry(db))
    assert not report.ok
    assert report.issues[0].kind == "UnknownPredicate"
    with pytest.raises(UnknownPredicate):
        report.raise_first()


def test_validate_arity():
    db = two_sample_db()
    rules = parse_rule_file("{(i,w(a),1) | hasAffordance(i,a,b)}")
    report = validate_rules(rules, build_registry(db))
    assert report.issues[0].kind == "ArityMismatch"


def test_validate_unbound_on_constructed_ast():
    db = two_sample_db()
    lit = Literal(False, "hasAffordance", (Variable("i"), Variable("a")))
    ast = RuleAst(
        key_vars=("i",),
        weight_terms=(Variable("zz"),),
        factor_expr=Constant(1.0),
        body=(lit,),
    )
    report = validate_rules([ast], build_registry(db))
    assert any(i.kind == "UnboundVariable" for i in report.issues)


def test_validate_sample_var_scoping():
    db = two_sample_db()
    rules = parse_rule_file("{(i,w(a),1) | hasAffordance(j,a) & hasAttribute(i,a)}")
    report = validate_rules(rules, build_registry(db))
    assert any(i.kind == "DomainUnresolvable" for i in report.issues)
