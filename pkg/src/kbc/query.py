"""Conjunctive queries: parse, bind candidates, estimate tuple marginals,
rank answers.

A query file lists one literal per line and ends with the answer head:

    sceneCategory(i, "beach")
    hasAttribute(i, "sunny")
    => answer(i)

Literals split into probabilistic ones (backed by KB variables) and
deterministic ones (metadata tables and built-ins such as nearBy).
Deterministic literals are exact filters evaluated during candidate binding;
the probability of a candidate tuple is the Gibbs estimate that all its
probabilistic literals hold simultaneously in the sample's factor graph.
Answers are sorted by probability descending, ties broken lexicographically
on the tuple constants.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import (
    DomainUnresolvable,
    RuleSyntaxError,
    UnboundAnswerVariable,
    UnknownFamily,
    UnknownPredicate,
    UnknownSample,
)
from .kbio import KnowledgeBase
from .rulelang import Constant, Literal, Variable, _Parser, _tokenize
from .sampler import SamplerConfig, parallel_estimate


@dataclass(frozen=True, slots=True)
class ConjunctiveQuery:
    literals: tuple[Literal, ...]
    answer_terms: tuple  # Variable | Constant, in head order

    @property
    def answer_vars(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.answer_terms if isinstance(t, Variable))


@dataclass(frozen=True, slots=True)
class AnswerTuple:
    values: tuple
    probability: float


def parse_query(text: str) -> ConjunctiveQuery:
    literals: list[Literal] = []
    answer_vars = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if answer_vars is not None:
            raise RuleSyntaxError("content after the answer line", lineno, 1)
        if line.startswith("=>"):
            parser = _Parser(_tokenize(line[2:]))
            head = parser.literal()
            if parser.peek().kind != "eof" or head.predicate != "answer" or head.negated:
                raise RuleSyntaxError("malformed answer head", lineno, 1)
            answer_vars = head.args  # constants pass through to the tuple
            continue
        parser = _Parser(_tokenize(line))
        try:
            lit = parser.literal()
        except RuleSyntaxError as exc:
            raise RuleSyntaxError(str(exc).split(" (line")[0], lineno, exc.column) from None
        if parser.peek().kind != "eof":
            raise RuleSyntaxError("trailing input after literal", lineno, parser.peek().col)
        literals.append(lit)
    if answer_vars is None:
        raise RuleSyntaxError("query must end with '=> answer(...)'", 1, 1)
    if not literals:
        raise RuleSyntaxError("query body is empty", 1, 1)
    body_vars = {t.name for lit in literals for t in lit.args if isinstance(t, Variable)}
    for term in answer_vars:
        if isinstance(term, Variable) and term.name not in body_vars:
            raise UnboundAnswerVariable(
                f"answer variable {term.name!r} not in any literal"
            )
    return ConjunctiveQuery(literals=tuple(literals), answer_terms=tuple(answer_vars))


def partition_literals(query: ConjunctiveQuery, registry) -> tuple[list, list]:
    """Split into (probabilistic, deterministic) literal lists."""
    prob, det = [], []
    for lit in query.literals:
        pred = registry.get(lit.predicate)
        if pred is None:
            raise UnknownPredicate(f"unknown predicate {lit.predicate!r}")
        if pred.arity != lit.arity:
            raise DomainUnresolvable(
                f"{lit.predicate} has arity {pred.arity}, used with {lit.arity}"
            )
        (prob if pred.is_data else det).append(lit)
    return prob, det


def _term_value(term, env):
    if isinstance(term, Constant):
        return term.value
    return env.get(term.name, _UNBOUND)


_UNBOUND = object()


def _extend_with_row(args, row, env):
    """Unify literal arguments against a row; returns the extended binding."""
    new = None
    for arg, val in zip(args, row):
        if isinstance(arg, Constant):
            if arg.value != val:
                return None
            continue
        scope = new if new is not None else env
        if arg.name in scope:
            if scope[arg.name] != val:
                return None
        else:
            if new is None:
                new = dict(env)
            new[arg.name] = val
    return env if new is None else new


def bind_candidates(query: ConjunctiveQuery, kb: KnowledgeBase) -> list[dict]:
    """Join deterministic literals and probabilistic variable domains.

    Returns full variable bindings projected onto the variables the answer
    head and the probabilistic literals need, deduplicated in first-seen
    order. Bindings processed in phases: positive metadata joins, KB-variable
    existence joins, negated metadata filters, built-in filters.
    """
    prob, det = partition_literals(query, kb.registry)
    det_pos = [l for l in det if not l.negated and kb.registry[l.predicate].kind == "deterministic"]
    det_neg = [l for l in det if l.negated and kb.registry[l.predicate].kind == "deterministic"]
    builtins = [l for l in det if kb.registry[l.predicate].kind == "builtin"]

    envs: list[dict] = [{}]
    for lit in det_pos:
        table = kb.registry[lit.predicate].table
        nxt = []
        for env in envs:
            for row in table.rows:
                e = _extend_with_row(lit.args, row, env)
                if e is not None:
                    nxt.append(e)
        envs = nxt
        if not envs:
            return []

    for lit in prob:
        pred = kb.registry[lit.predicate]
        table = pred.table
        tdef = table.table_def
        key_idx = [tdef.column_index(c) for c in tdef.key_columns]
        nxt = []
        if pred.kind == "boolean":
            for env in envs:
                for row in table.rows:
                    key = tuple(row[i] for i in key_idx)
                    e = _extend_with_row(lit.args, key, env)
                    if e is not None:
                        nxt.append(e)
        else:
            for env in envs:
                for row in table.rows:
                    key = tuple(row[i] for i in key_idx)
                    e = _extend_with_row(lit.args[:-1], key, env)
                    if e is None:
                        continue
                    value_arg = lit.args[-1]
                    if pred.kind == "multinomial":
                        v = _term_value(value_arg, e)
                        if v is _UNBOUND:
                            for level in pred.value_domain:
                                e2 = dict(e)
                                e2[value_arg.name] = level
                                nxt.append(e2)
                        elif v in pred.value_domain:
                            nxt.append(e)
                    else:  # continuous: value is the observed real
                        vcol = tdef.column_index(tdef.value_columns[0])
                        e2 = _extend_with_row((value_arg,), (row[vcol],), e)
                        if e2 is not None:
                            nxt.append(e2)
        envs = nxt
        if not envs:
            return []

    for lit in det_neg:
        table = kb.registry[lit.predicate].table
        nxt = []
        for env in envs:
            vals = [_term_value(a, env) for a in lit.args]
            if any(v is _UNBOUND for v in vals):
                raise DomainUnresolvable(
                    f"negated {lit.predicate} needs all arguments bound"
                )
            if not any(
                all(rv == v for rv, v in zip(row, vals)) for row in table.rows
            ):
                nxt.append(env)
        envs = nxt

    for lit in builtins:
        pred = kb.registry[lit.predicate]
        nxt = []
        for env in envs:
            vals = [_term_value(a, env) for a in lit.args]
            if any(v is _UNBOUND for v in vals):
                raise DomainUnresolvable(
                    f"built-in {lit.predicate} needs all arguments bound"
                )
            hit = bool(pred.evaluate(*vals))
            if hit != lit.negated:
                nxt.append(env)
        envs = nxt

    needed = set(query.answer_vars)
    for lit in prob:
        needed.update(t.name for t in lit.args if isinstance(t, Variable))
    for name in needed:
        for env in envs:
            if name not in env:
                raise DomainUnresolvable(f"variable {name!r} has no table domain")
    seen = set()
    out = []
    for env in envs:
        projected = tuple(sorted((k, v) for k, v in env.items() if k in needed))
        if projected not in seen:
            seen.add(projected)
            out.append({k: v for k, v in env.items() if k in needed})
    return out


def _probabilistic_conjunction(query, binding, kb):
    """Instantiate the probabilistic literals as (vid, value, negated) conjuncts.

    Returns (sample_id or None, conjunction list).
    """
    prob, _ = partition_literals(query, kb.registry)
    samples = set()
    conj = []
    for lit in prob:
        pred = kb.registry[lit.predicate]
        args = [
            a.value if isinstance(a, Constant) else binding[a.name] for a in lit.args
        ]
        sample = args[0]
        samples.add(sample)
        if pred.kind == "boolean":
            conj.append(((sample, lit.predicate, tuple(args[1:])), True, lit.negated))
        elif pred.kind == "multinomial":
            conj.append(
                ((sample, lit.predicate, tuple(args[1:-1])), args[-1], lit.negated)
            )
        # continuous literals are evidence lookups, satisfied by binding
    if len(samples) > 1:
        raise DomainUnresolvable(
            f"probabilistic literals span samples {sorted(samples)}"
        )
    return (next(iter(samples)) if samples else None), conj


def tuple_marginal(
    query: ConjunctiveQuery,
    binding: dict,
    kb: KnowledgeBase,
    config: SamplerConfig,
) -> float:
    """Estimated probability that every probabilistic literal of the bound
    query holds simultaneously; 1.0 when the query is deterministic-only."""
    sample, conj = _probabilistic_conjunction(query, binding, kb)
    if sample is None:
        return 1.0
    graph = kb.graph_for(sample)
    if graph is None:
        raise UnknownSample(f"no factor graph for sample {sample}")
    return float(parallel_estimate([graph], kb.weights, [conj], config)[0])


def answer_values(query: ConjunctiveQuery, binding: dict) -> tuple:
    """The answer tuple for one binding (head constants pass through)."""
    return tuple(
        t.value if isinstance(t, Constant) else binding[t.name]
        for t in query.answer_terms
    )


def _sort_key(values: tuple):
    return tuple(str(v) for v in values)


def answer(
    query: ConjunctiveQuery,
    kb: KnowledgeBase,
    config: SamplerConfig,
    top_k: int | None = None,
) -> list[AnswerTuple]:
    """Ranked answers: bind candidates, estimate marginals, sort, truncate.

    Candidates on the same sample share that sample's chain; chains run in
    parallel across samples per the sampler config.
    """
    candidates = bind_candidates(query, kb)
    if not candidates:
        return []
    conjs = []
    graphs_needed: dict[int, object] = {}
    rows = []
    for binding in candidates:
        sample, conj = _probabilistic_conjunction(query, binding, kb)
        values = answer_values(query, binding)
        if sample is None:
            rows.append((values, 1.0, None))
            continue
        graph = kb.graph_for(sample)
        if graph is None:
            raise UnknownSample(f"no factor graph for sample {sample}")
        graphs_needed[sample] = graph
        rows.append((values, None, len(conjs)))
        conjs.append(conj)
    if conjs:
        graphs = [graphs_needed[s] for s in sorted(graphs_needed)]
        probs = parallel_estimate(graphs, kb.weights, conjs, config)
    answers = []
    for values, p, idx in rows:
        answers.append(
            AnswerTuple(values=values, probability=p if idx is None else float(probs[idx]))
        )
    answers.sort(key=lambda a: (-a.probability, _sort_key(a.values)))
    if top_k is not None:
        answers = answers[:top_k]
    return answers


def classify(
    sample_id: int,
    label_family: str,
    kb: KnowledgeBase,
    config: SamplerConfig,
) -> list[tuple]:
    """Per-label marginals for one sample, sorted descending.

    Multinomial families report the conditional distribution over levels;
    Boolean families report P(label true) per label.
    """
    pred = kb.registry.get(label_family)
    if pred is None or not pred.is_data or pred.kind == "continuous":
        raise UnknownFamily(f"{label_family!r} is not a label family")
    graph = kb.graph_for(sample_id)
    if graph is None:
        raise UnknownSample(f"no factor graph for sample {sample_id}")
    if pred.kind == "multinomial":
        labels = list(pred.value_domain)
        targets = [[((sample_id, label_family, ()), level, False)] for level in labels]
    else:
        tdef = pred.table.table_def
        label_col = tdef.key_columns[1] if len(tdef.key_columns) > 1 else None
        if label_col is None:
            raise UnknownFamily(f"{label_family!r} has no label key column")
        labels = sorted({v for v in pred.table.column(label_col) if v is not None})
        targets = [
            [((sample_id, label_family, (label,)), True, False)] for label in labels
        ]
    probs = parallel_estimate([graph], kb.weights, targets, config)
    ranked = sorted(
        zip(labels, probs.tolist()), key=lambda t: (-t[1], _sort_key((t[0],)))
    )
    return ranked
