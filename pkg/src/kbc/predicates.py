"""Predicate registry: maps predicate names to their backing tables.

A data table backs a probabilistic predicate; its shape fixes the variable
kind. Data tables must have ``sample_id`` as their first key column and
exactly one non-key (value) column:

    value column boolean  -> Boolean variable,   arity = #key columns
    value column real     -> continuous evidence, arity = #key columns + 1
    value column text/int -> Multinomial variable, arity = #key columns + 1

For the +1 arities the literal's last argument matches (or binds) the value
column. Metadata tables back deterministic predicates whose truth is row
existence; built-ins (``nearBy``) are computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .datastore import Database, DataTable
from .errors import SchemaError

EARTH_RADIUS_KM = 6371.0


@dataclass(slots=True)
class Predicate:
    name: str
    kind: str  # "boolean" | "multinomial" | "continuous" | "deterministic" | "builtin"
    arity: int
    table: DataTable | None = None
    value_domain: tuple | None = None  # multinomial levels, sorted
    evaluate: Callable[..., bool] | None = None  # built-ins only

    @property
    def is_data(self) -> bool:
        return self.kind in ("boolean", "multinomial", "continuous")

    def label_key_count(self) -> int:
        """Key columns beyond sample_id."""
        return len(self.table.table_def.key_columns) - 1


def _classify_data_table(table: DataTable) -> Predicate:
    tdef = table.table_def
    keys = tdef.key_columns
    if keys[0] != "sample_id" or tdef.column_type("sample_id") != "integer":
        raise SchemaError(
            f"data table {tdef.name}: first key column must be sample_id:integer"
        )
    values = tdef.value_columns
    if len(values) != 1:
        raise SchemaError(
            f"data table {tdef.name}: exactly one value column required, got {values}"
        )
    vtype = tdef.column_type(values[0])
    vcol = tdef.column_index(values[0])
    if vtype == "boolean":
        return Predicate(tdef.name, "boolean", arity=len(keys), table=table)
    if vtype == "real":
        for rownum, row in enumerate(table.rows):
            if row[vcol] is None:
                raise SchemaError(
                    f"{tdef.name} row {rownum}: continuous evidence must carry a value"
                )
        return Predicate(tdef.name, "continuous", arity=len(keys) + 1, table=table)
    observed = {row[vcol] for row in table.rows if row[vcol] is not None}
    if tdef.domain is not None:
        domain = tuple(sorted(tdef.domain))
        extra = observed - set(domain)
        if extra:
            raise SchemaError(
                f"data table {tdef.name}: values {sorted(extra)} outside the "
                "declared domain"
            )
    else:
        domain = tuple(sorted(observed))
    if not domain:
        raise SchemaError(f"data table {tdef.name}: empty multinomial domain")
    return Predicate(
        tdef.name, "multinomial", arity=len(keys) + 1, table=table, value_domain=domain
    )


def parse_latlong(text: str) -> tuple[float, float]:
    try:
        lat, lon = text.split(",")
        return float(lat), float(lon)
    except ValueError:
        raise SchemaError(f"bad lat,long value {text!r}")


def parse_radius_km(text: str) -> float:
    if not text.endswith("km"):
        raise SchemaError(f"radius {text!r} must end in 'km'")
    try:
        return float(text[:-2])
    except ValueError:
        raise SchemaError(f"bad radius {text!r}")


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = (math.radians(x) for x in a)
    lat2, lon2 = (math.radians(x) for x in b)
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def _near_by(loc1: str, loc2: str, radius: str) -> bool:
    return haversine_km(parse_latlong(loc1), parse_latlong(loc2)) <= parse_radius_km(
        radius
    )


BUILTINS = {
    "nearBy": Predicate("nearBy", "builtin", arity=3, evaluate=_near_by),
}


def build_registry(db: Database) -> dict[str, Predicate]:
    registry: dict[str, Predicate] = dict(BUILTINS)
    for tdef in db.schema.tables:
        table = db.table(tdef.name)
        if tdef.name in BUILTINS:
            raise SchemaError(f"table {tdef.name} collides with a built-in predicate")
        if tdef.role == "data":
            registry[tdef.name] = _classify_data_table(table)
        else:
            registry[tdef.name] = Predicate(
                tdef.name, "deterministic", arity=len(tdef.columns), table=table
            )
    return registry


def sample_ids(db: Database) -> list[int]:
    """Sorted distinct sample ids across all data tables."""
    ids: set[int] = set()
    for tdef in db.schema.tables:
        if tdef.role != "data":
            continue
        col = db.table(tdef.name).column("sample_id")
        ids.update(col)
    return sorted(ids)
