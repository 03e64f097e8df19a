"""The declarative rule language.

A rule is a set comprehension that pairs a weight-sharing key with a factor
expression over a conjunctive body:

    {(i, w(a1, a2), 1) | hasAffordance(i, a1) & hasAttribute(i, a2)}

Grammar (EBNF):

    rule       := "{" "(" keytuple "," "w" "(" termlist ")" "," factorexpr ")"
                  "|" literal { ("&" | "∧") literal } "}"
    keytuple   := var | "(" var {"," var} ")"
    factorexpr := number | var
    literal    := ["!"] ident "(" term {"," term} ")"
    term       := var | quoted-string | number

The first key variable scopes the rule to one sample graph per binding.
Bare identifiers in argument position are variables; constants are quoted
strings or numbers. ``#`` starts a comment. Parsing is total and
deterministic: the same input always yields the same AST or the same error
position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .errors import (
    ArityMismatch,
    DomainUnresolvable,
    RuleSyntaxError,
    UnboundVariable,
    UnknownPredicate,
)

_VAR_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")


@dataclass(frozen=True, slots=True)
class Variable:
    name: str


@dataclass(frozen=True, slots=True)
class Constant:
    value: object  # str or float


Term = Variable | Constant


@dataclass(frozen=True, slots=True)
class Literal:
    negated: bool
    predicate: str
    args: tuple[Term, ...]

    @property
    def arity(self) -> int:
        return len(self.args)


@dataclass(frozen=True, slots=True)
class RuleAst:
    key_vars: tuple[str, ...]
    weight_terms: tuple[Term, ...]
    factor_expr: Term  # Constant(number) or a body-bound Variable
    body: tuple[Literal, ...]
    rule_id: int = field(default=0, compare=False)

    @property
    def sample_var(self) -> str:
        return self.key_vars[0]

    def body_variables(self) -> set[str]:
        return {t.name for lit in self.body for t in lit.args if isinstance(t, Variable)}


# --- tokenizer ------------------------------------------------------------

_PUNCT = {"{", "}", "(", ")", ",", "|", "!", "&"}
_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?([eE][-+]?\d+)?")


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # punct | ident | number | string | eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "∧":
            tokens.append(_Token("punct", "&", line, col))
            i += 1
            col += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token("punct", ch, line, col))
            i += 1
            col += 1
            continue
        if ch == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    out.append(text[j + 1])
                    j += 2
                else:
                    out.append(text[j])
                    j += 1
            if j >= n:
                raise RuleSyntaxError("unterminated string", line, col)
            tokens.append(_Token("string", "".join(out), line, col))
            col += j + 1 - i
            i = j + 1
            continue
        m = _NUMBER_RE.match(text, i)
        if m and (ch.isdigit() or ch == "-"):
            tokens.append(_Token("number", m.group(), line, col))
            col += m.end() - i
            i = m.end()
            continue
        m = _VAR_RE.match(text, i)
        if m:
            tokens.append(_Token("ident", m.group(), line, col))
            col += m.end() - i
            i = m.end()
            continue
        raise RuleSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str) -> None:
        tok = self.peek()
        raise RuleSyntaxError(message, tok.line, tok.col)

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            self.fail(f"expected {text!r}, found {tok.text or 'end of input'!r}")
        return self.next()

    def expect_ident(self, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != "ident":
            self.fail(f"expected {what}, found {tok.text or 'end of input'!r}")
        return self.next()

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == text

    # grammar productions ---------------------------------------------

    def rule(self) -> RuleAst:
        self.expect("{")
        self.expect("(")
        key_vars = self.keytuple()
        self.expect(",")
        w = self.expect_ident("'w'")
        if w.text != "w":
            raise RuleSyntaxError(f"expected 'w', found {w.text!r}", w.line, w.col)
        self.expect("(")
        weight_terms = [self.term()]
        while self.at_punct(","):
            self.next()
            weight_terms.append(self.term())
        self.expect(")")
        self.expect(",")
        factor_expr = self.factorexpr()
        self.expect(")")
        self.expect("|")
        body = [self.literal()]
        while self.at_punct("&"):
            self.next()
            body.append(self.literal())
        self.expect("}")
        rule = RuleAst(
            key_vars=tuple(key_vars),
            weight_terms=tuple(weight_terms),
            factor_expr=factor_expr,
            body=tuple(body),
        )
        _check_rule(rule)
        return rule

    def keytuple(self) -> list[str]:
        if self.at_punct("("):
            self.next()
            names = [self.expect_ident("key variable").text]
            while self.at_punct(","):
                self.next()
                names.append(self.expect_ident("key variable").text)
            self.expect(")")
            return names
        return [self.expect_ident("key variable").text]

    def factorexpr(self) -> Term:
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            return Constant(float(tok.text))
        if tok.kind == "ident":
            self.next()
            return Variable(tok.text)
        self.fail("expected a factor expression (number or variable)")

    def literal(self) -> Literal:
        negated = False
        if self.at_punct("!"):
            self.next()
            negated = True
        name = self.expect_ident("predicate name").text
        self.expect("(")
        args = [self.term()]
        while self.at_punct(","):
            self.next()
            args.append(self.term())
        self.expect(")")
        return Literal(negated=negated, predicate=name, args=tuple(args))

    def term(self) -> Term:
        tok = self.peek()
        if tok.kind == "ident":
            self.next()
            return Variable(tok.text)
        if tok.kind == "string":
            self.next()
            return Constant(tok.text)
        if tok.kind == "number":
            self.next()
            return Constant(float(tok.text))
        self.fail("expected a term (variable, string or number)")


def _check_rule(rule: RuleAst) -> None:
    """Structural checks: boundness and within-rule arity consistency."""
    bound = rule.body_variables()
    for name in rule.key_vars:
        if name not in bound:
            raise UnboundVariable(f"key variable {name!r} not bound in the body")
    for t in rule.weight_terms:
        if isinstance(t, Variable) and t.name not in bound:
            raise UnboundVariable(f"weight variable {t.name!r} not bound in the body")
    fe = rule.factor_expr
    if isinstance(fe, Variable) and fe.name not in bound:
        raise UnboundVariable(f"factor variable {fe.name!r} not bound in the body")
    arities: dict[str, int] = {}
    for lit in rule.body:
        prev = arities.setdefault(lit.predicate, lit.arity)
        if prev != lit.arity:
            raise ArityMismatch(
                f"{lit.predicate} used with arity {lit.arity} and {prev} in one rule"
            )


def parse_rule(text: str) -> RuleAst:
    """Parse a single rule; trailing input is an error."""
    parser = _Parser(_tokenize(text))
    rule = parser.rule()
    if parser.peek().kind != "eof":
        parser.fail("trailing input after rule")
    return rule


def parse_rule_file(text: str) -> list[RuleAst]:
    """Parse a whole rule file; rule ids are assigned by position."""
    parser = _Parser(_tokenize(text))
    rules = []
    while parser.peek().kind != "eof":
        rules.append(replace(parser.rule(), rule_id=len(rules)))
    return rules


# --- printing ---------------------------------------------------------------


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _format_term(term: Term) -> str:
    if isinstance(term, Variable):
        return term.name
    if isinstance(term.value, str):
        escaped = term.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return _format_number(term.value)


def _format_literal(lit: Literal) -> str:
    bang = "!" if lit.negated else ""
    args = ", ".join(_format_term(t) for t in lit.args)
    return f"{bang}{lit.predicate}({args})"


def pretty_print(rule: RuleAst) -> str:
    """Canonical text form; re-parses to an equal AST."""
    if len(rule.key_vars) == 1:
        keys = rule.key_vars[0]
    else:
        keys = "(" + ", ".join(rule.key_vars) + ")"
    weights = ", ".join(_format_term(t) for t in rule.weight_terms)
    factor = _format_term(rule.factor_expr)
    body = " & ".join(_format_literal(lit) for lit in rule.body)
    return f"{{({keys}, w({weights}), {factor}) | {body}}}"


# --- validation -------------------------------------------------------------


@dataclass(slots=True)
class ValidationIssue:
    rule_id: int
    kind: str  # exception class name
    message: str


@dataclass(slots=True)
class ValidationReport:
    issues: list[ValidationIssue]

    @property
    def ok(self) -> bool:
        return not self.issues

    def raise_first(self) -> None:
        if not self.issues:
            return
        issue = self.issues[0]
        cls = {
            "UnknownPredicate": UnknownPredicate,
            "ArityMismatch": ArityMismatch,
            "UnboundVariable": UnboundVariable,
            "DomainUnresolvable": DomainUnresolvable,
        }[issue.kind]
        raise cls(f"rule {issue.rule_id}: {issue.message}")


def validate_rules(rules: list[RuleAst], registry) -> ValidationReport:
    """Resolve every body predicate against a predicate registry.

    ``registry`` maps predicate name to an object with ``arity``, ``kind``
    ("boolean" | "multinomial" | "continuous" | "deterministic" | "builtin")
    and, for continuous predicates, a real-typed value position. Checks:
    predicates exist, arities match, the sample variable scopes every
    variable-backed literal, and the factor variable (if any) binds the value
    position of a continuous literal.
    """
    issues: list[ValidationIssue] = []

    def add(rule_id, kind, message):
        issues.append(ValidationIssue(rule_id, kind, message))

    for rule in rules:
        rid = rule.rule_id
        bound = rule.body_variables()
        for name in rule.key_vars:
            if name not in bound:
                add(rid, "UnboundVariable", f"key variable {name!r} not bound")
        for t in rule.weight_terms:
            if isinstance(t, Variable) and t.name not in bound:
                add(rid, "UnboundVariable", f"weight variable {t.name!r} not bound")
        factor_var = (
            rule.factor_expr.name if isinstance(rule.factor_expr, Variable) else None
        )
        if factor_var is not None and factor_var not in bound:
            add(rid, "UnboundVariable", f"factor variable {factor_var!r} not bound")
        factor_bound_continuous = False
        for lit in rule.body:
            pred = registry.get(lit.predicate)
            if pred is None:
                add(rid, "UnknownPredicate", f"unknown predicate {lit.predicate!r}")
                continue
            if pred.arity != lit.arity:
                add(
                    rid,
                    "ArityMismatch",
                    f"{lit.predicate} has arity {pred.arity}, used with {lit.arity}",
                )
                continue
            if pred.kind in ("boolean", "multinomial", "continuous"):
                first = lit.args[0]
                if not (isinstance(first, Variable) and first.name == rule.sample_var):
                    add(
                        rid,
                        "DomainUnresolvable",
                        f"{lit.predicate}: first argument must be the sample "
                        f"variable {rule.sample_var!r}",
                    )
                if pred.kind == "continuous":
                    if lit.negated:
                        add(
                            rid,
                            "DomainUnresolvable",
                            f"{lit.predicate}: evidence literals cannot be negated",
                        )
                    value_arg = lit.args[-1]
                    if isinstance(value_arg, Variable) and value_arg.name == factor_var:
                        factor_bound_continuous = True
            elif pred.kind in ("deterministic", "builtin"):
                add(
                    rid,
                    "DomainUnresolvable",
                    f"{lit.predicate}: metadata predicates are not allowed in rule bodies",
                )
        if factor_var is not None and not factor_bound_continuous:
            add(
                rid,
                "DomainUnresolvable",
                f"factor variable {factor_var!r} must bind the value position of a "
                "continuous evidence literal",
            )
    return ValidationReport(issues=issues)
