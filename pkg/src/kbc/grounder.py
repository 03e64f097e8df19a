"""Rule grounding: instantiate rules over the tables into per-sample factor
graphs with tied weights.

Each data-table row declares one variable. For every sample id and every
rule, each satisfiable binding of the rule body yields exactly one factor
instance; instances arising from the same rule with the same instantiated
weight terms share a single weight-store entry, so the parameter count is
independent of the number of samples.

Binding semantics per body literal:

* Boolean literal  p(i, l...)        - one candidate per table row of the
  sample; label arguments bind to the row's key columns. Negation does not
  filter rows; it flips the required sign in the factor.
* Multinomial literal p(i, l..., c)  - the row must exist; an unbound value
  argument ranges over the full label domain (one factor per level).
* Continuous literal p(i, l..., f)   - the row must exist; the value
  argument binds to the observed real value.

Grounding is deterministic: samples ascending, rules in file order, table
rows in row order, multinomial domains sorted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .datastore import Database
from .errors import DomainExplosion, UnboundVariable, UnresolvedDomain
from .predicates import Predicate, build_registry, sample_ids
from .rulelang import Constant, RuleAst, ValidationReport, Variable, validate_rules

DEFAULT_FACTOR_CAP = 10**9

# Variable ids are (sample_id, predicate, label_args) triples.
VarId = tuple


@dataclass(frozen=True, slots=True)
class VariableDecl:
    vid: VarId
    kind: str  # "boolean" | "multinomial" | "continuous"
    domain: tuple | None = None  # multinomial levels
    observed: object | None = None

    @property
    def sample_id(self) -> int:
        return self.vid[0]

    def values(self) -> tuple:
        """The candidate values a discrete variable can take."""
        if self.kind == "boolean":
            return (False, True)
        if self.kind == "multinomial":
            return self.domain
        raise UnresolvedDomain(f"{self.vid}: continuous variables have no domain")


@dataclass(frozen=True, order=True, slots=True)
class WeightKey:
    rule_id: int
    terms: tuple[str, ...]

    def __str__(self) -> str:
        return f"w[{self.rule_id}]({', '.join(self.terms)})"


@dataclass(frozen=True, slots=True)
class FactorInstance:
    weight_key: WeightKey
    kind: str  # "indicator" | "linear" | "constant"
    var_refs: tuple[VarId, ...]
    required_values: tuple  # value each ref is compared against
    negated: tuple[bool, ...]  # True flips the per-ref indicator
    feature_ref: VarId | None = None
    constant: float = 1.0


class WeightStore:
    """Mapping from weight keys to real weights.

    Keys are fixed at grounding time (initialized to 0.0, the maximum-entropy
    model); learning only updates values. Reads of unknown keys raise.
    """

    __slots__ = ("_data", "_sorted")

    def __init__(self, keys=(), init: float = 0.0):
        self._data = {k: init for k in keys}
        self._sorted = None

    def __getitem__(self, key: WeightKey) -> float:
        return self._data[key]

    def __setitem__(self, key: WeightKey, value: float) -> None:
        if key not in self._data:
            raise KeyError(f"unknown weight key {key}")
        self._data[key] = value

    def __contains__(self, key: WeightKey) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self.sorted_keys())

    def sorted_keys(self) -> list[WeightKey]:
        if self._sorted is None:
            self._sorted = sorted(self._data)
        return self._sorted

    def items_sorted(self):
        return [(k, self._data[k]) for k in self.sorted_keys()]

    def copy(self) -> "WeightStore":
        out = WeightStore()
        out._data = dict(self._data)
        return out

    @classmethod
    def from_items(cls, items) -> "WeightStore":
        out = cls()
        out._data = {k: float(v) for k, v in items}
        return out


@dataclass(slots=True)
class FactorGraph:
    sample_id: int
    variables: list[VariableDecl]
    factors: list[FactorInstance]
    _by_id: dict = field(default=None, repr=False, compare=False)
    _blankets: dict = field(default=None, repr=False, compare=False)

    def variable(self, vid: VarId) -> VariableDecl:
        if self._by_id is None:
            self._by_id = {v.vid: v for v in self.variables}
        return self._by_id[vid]

    def has_variable(self, vid: VarId) -> bool:
        if self._by_id is None:
            self._by_id = {v.vid: v for v in self.variables}
        return vid in self._by_id

    def blanket(self, vid: VarId) -> list[FactorInstance]:
        """Factors touching the variable (its Markov blanket)."""
        if self._blankets is None:
            blankets: dict[VarId, list[FactorInstance]] = {v.vid: [] for v in self.variables}
            for f in self.factors:
                seen = set()
                for ref in f.var_refs:
                    if ref not in seen:
                        blankets[ref].append(f)
                        seen.add(ref)
            self._blankets = blankets
        return self._blankets[vid]

    def free_variables(self) -> list[VariableDecl]:
        """Unobserved discrete variables, in declaration order."""
        return [
            v
            for v in self.variables
            if v.kind != "continuous" and v.observed is None
        ]


def _canon_term(value) -> str:
    """Canonical string form of an instantiated weight term."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def weight_key_of(rule: RuleAst, binding: dict) -> WeightKey:
    """Weight key for one binding: (rule id, instantiated weight terms)."""
    terms = []
    for t in rule.weight_terms:
        if isinstance(t, Variable):
            if t.name not in binding:
                raise UnboundVariable(f"weight variable {t.name!r} not in binding")
            terms.append(_canon_term(binding[t.name]))
        else:
            terms.append(_canon_term(t.value))
    return WeightKey(rule_id=rule.rule_id, terms=tuple(terms))


class _SampleRows:
    """Per-predicate index: sample id -> [(label key suffix, value), ...]."""

    __slots__ = ("by_sample",)

    def __init__(self, pred: Predicate):
        tdef = pred.table.table_def
        key_idx = [tdef.column_index(c) for c in tdef.key_columns]
        val_idx = tdef.column_index(tdef.value_columns[0])
        self.by_sample: dict[int, list[tuple[tuple, object]]] = {}
        for row in pred.table.rows:
            suffix = tuple(row[i] for i in key_idx[1:])
            self.by_sample.setdefault(row[key_idx[0]], []).append((suffix, row[val_idx]))

    def rows(self, sample: int) -> list[tuple[tuple, object]]:
        return self.by_sample.get(sample, ())


def _match_args(args, suffix, env):
    """Unify literal label arguments against a row key suffix.

    Returns the extended binding or None. Constants and bound variables must
    equal the row value; unbound variables bind to it.
    """
    new = None
    for arg, rowval in zip(args, suffix):
        if isinstance(arg, Constant):
            if arg.value != rowval:
                return None
        else:
            bound = env.get(arg.name) if new is None else new.get(arg.name, env.get(arg.name))
            if bound is None:
                if new is None:
                    new = dict(env)
                new[arg.name] = rowval
            elif bound != rowval:
                return None
    return env if new is None else new


class _Grounding:
    def __init__(self, rules, db: Database, registry=None, factor_cap=DEFAULT_FACTOR_CAP):
        self.rules = rules
        self.db = db
        self.registry = registry if registry is not None else build_registry(db)
        self.factor_cap = factor_cap
        report: ValidationReport = validate_rules(rules, self.registry)
        report.raise_first()
        self.samples = sample_ids(db)
        self.indexes = {
            name: _SampleRows(p)
            for name, p in self.registry.items()
            if p.is_data
        }
        # interning caches: factors of one sample reference the same few
        # variable ids and sign tuples, so share the tuple objects
        self._vids: dict = {}
        self._small: dict = {}
        self._check_projection()

    def _intern_vid(self, vid):
        return self._vids.setdefault(vid, vid)

    def _intern_small(self, tup):
        return self._small.setdefault(tup, tup)

    def _check_projection(self) -> None:
        """Upper-bound the factor count before enumerating anything."""
        projected = 0
        for rule in self.rules:
            for sample in self.samples:
                per_sample = 1
                for lit in rule.body:
                    pred = self.registry[lit.predicate]
                    n = len(self.indexes[lit.predicate].rows(sample))
                    if pred.kind == "multinomial":
                        n *= len(pred.value_domain)
                    per_sample *= n
                    if per_sample == 0:
                        break
                projected += per_sample
                if projected > self.factor_cap:
                    raise DomainExplosion(
                        f"projected factor count exceeds cap {self.factor_cap:g}"
                    )

    def variables_for(self, sample: int) -> list[VariableDecl]:
        decls = []
        for tdef in self.db.schema.tables:
            if tdef.role != "data":
                continue
            pred = self.registry[tdef.name]
            for suffix, value in self.indexes[tdef.name].rows(sample):
                decls.append(
                    VariableDecl(
                        vid=self._intern_vid((sample, tdef.name, suffix)),
                        kind=pred.kind,
                        domain=pred.value_domain,
                        observed=value,
                    )
                )
        return decls

    def bindings(self, rule: RuleAst, sample: int):
        """All satisfiable bindings of the rule body for one sample (DFS order)."""
        envs = [{rule.sample_var: sample}]
        for lit in rule.body:
            pred = self.registry[lit.predicate]
            index = self.indexes[lit.predicate]
            nxt = []
            for env in envs:
                rows = index.rows(sample)
                if pred.kind == "boolean":
                    for suffix, _ in rows:
                        e = _match_args(lit.args[1:], suffix, env)
                        if e is not None:
                            nxt.append(e)
                    continue
                key_args, value_arg = lit.args[1:-1], lit.args[-1]
                for suffix, rowval in rows:
                    e = _match_args(key_args, suffix, env)
                    if e is None:
                        continue
                    if pred.kind == "continuous":
                        e2 = _match_args((value_arg,), (rowval,), e)
                        if e2 is not None:
                            nxt.append(e2)
                    else:  # multinomial: value ranges over the whole domain
                        if isinstance(value_arg, Variable) and value_arg.name not in e:
                            for level in pred.value_domain:
                                e2 = dict(e)
                                e2[value_arg.name] = level
                                nxt.append(e2)
                        else:
                            want = (
                                e[value_arg.name]
                                if isinstance(value_arg, Variable)
                                else value_arg.value
                            )
                            if want in pred.value_domain:
                                nxt.append(e)
            envs = nxt
            if not envs:
                break
        return envs

    def make_factor(self, rule: RuleAst, env: dict, key_cache: dict) -> FactorInstance:
        factor_var = (
            rule.factor_expr.name if isinstance(rule.factor_expr, Variable) else None
        )
        sample = env[rule.sample_var]
        refs, values, negs = [], [], []
        feature_ref = None
        for lit in rule.body:
            pred = self.registry[lit.predicate]
            if pred.kind == "boolean":
                suffix = tuple(
                    a.value if isinstance(a, Constant) else env[a.name]
                    for a in lit.args[1:]
                )
                refs.append(self._intern_vid((sample, lit.predicate, suffix)))
                values.append(True)
                negs.append(lit.negated)
            elif pred.kind == "multinomial":
                suffix = tuple(
                    a.value if isinstance(a, Constant) else env[a.name]
                    for a in lit.args[1:-1]
                )
                value_arg = lit.args[-1]
                level = (
                    value_arg.value
                    if isinstance(value_arg, Constant)
                    else env[value_arg.name]
                )
                refs.append(self._intern_vid((sample, lit.predicate, suffix)))
                values.append(level)
                negs.append(lit.negated)
            else:  # continuous evidence
                suffix = tuple(
                    a.value if isinstance(a, Constant) else env[a.name]
                    for a in lit.args[1:-1]
                )
                value_arg = lit.args[-1]
                if (
                    factor_var is not None
                    and isinstance(value_arg, Variable)
                    and value_arg.name == factor_var
                ):
                    feature_ref = self._intern_vid((sample, lit.predicate, suffix))
        key = weight_key_of(rule, env)
        key = key_cache.setdefault(key, key)
        if factor_var is not None:
            kind = "linear"
            constant = 1.0
        elif refs:
            kind = "indicator"
            constant = float(rule.factor_expr.value)
        else:
            kind = "constant"
            constant = float(rule.factor_expr.value)
        return FactorInstance(
            weight_key=key,
            kind=kind,
            var_refs=tuple(refs),  # sample-specific, nothing to share
            required_values=self._intern_small(tuple(values)),
            negated=self._intern_small(tuple(negs)),
            feature_ref=feature_ref,
            constant=constant,
        )


def ground(
    rules: list[RuleAst],
    db: Database,
    registry: dict | None = None,
    factor_cap: int = DEFAULT_FACTOR_CAP,
) -> tuple[list[FactorGraph], WeightStore]:
    """Ground validated rules over the database.

    Returns one factor graph per distinct sample id (ascending) and the
    weight store holding one zero-initialized entry per distinct weight key.
    """
    g = _Grounding(rules, db, registry, factor_cap)
    key_cache: dict[WeightKey, WeightKey] = {}
    graphs = []
    for sample in g.samples:
        factors = []
        for rule in rules:
            for env in g.bindings(rule, sample):
                factors.append(g.make_factor(rule, env, key_cache))
        graphs.append(
            FactorGraph(sample_id=sample, variables=g.variables_for(sample), factors=factors)
        )
    return graphs, WeightStore(keys=key_cache.values())


def factor_count_report(
    rules: list[RuleAst],
    db: Database,
    registry: dict | None = None,
    factor_cap: int = DEFAULT_FACTOR_CAP,
) -> dict:
    """Grounding statistics without materializing factor instances."""
    g = _Grounding(rules, db, registry, factor_cap)
    n_variables = sum(
        len(db.table(t.name)) for t in db.schema.tables if t.role == "data"
    )
    n_factors = 0
    keys = set()
    for sample in g.samples:
        for rule in rules:
            for env in g.bindings(rule, sample):
                n_factors += 1
                keys.add(weight_key_of(rule, env))
    return {
        "n_variables": n_variables,
        "n_factors": n_factors,
        "n_parameters": len(keys),
    }
