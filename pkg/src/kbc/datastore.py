"""Typed relational tables backing the knowledge base.

Tables come in two roles: ``data`` tables hold the entities that become
factor-graph variables (one variable per row); ``metadata`` tables hold
auxiliary facts used only as deterministic filters during query answering.

On-disk format is CSV (mandatory header, UTF-8, ``\\n`` line endings,
RFC-style quoting) plus a plain-text schema manifest, one stanza per table:

    table hasAffordance data
    columns sample_id:integer label:text value:boolean
    keys sample_id label

Booleans serialize as literal ``true``/``false``; reals are IEEE doubles and
must be finite; an empty cell in a non-key column reads as ``None`` (an
absent/latent value). Tables are immutable after load and safe to share
across threads.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DuplicateKey,
    MissingColumn,
    SchemaError,
    TypeMismatch,
    UnknownColumn,
)

COLUMN_TYPES = ("integer", "real", "text", "boolean")

SCHEMA_FILENAME = "schema.txt"

_IDENT_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


def _check_ident(name: str, what: str) -> None:
    if not name or name[0].isdigit() or not set(name) <= _IDENT_OK:
        raise SchemaError(f"invalid {what} name: {name!r}")


@dataclass(frozen=True, slots=True)
class TableDef:
    name: str
    columns: tuple[tuple[str, str], ...]  # (column name, column type)
    key_columns: tuple[str, ...]
    role: str = "data"  # "data" | "metadata"
    domain: tuple | None = None  # declared value-column domain (label tables)

    def __post_init__(self):
        _check_ident(self.name, "table")
        seen = set()
        for col, typ in self.columns:
            _check_ident(col, "column")
            if typ not in COLUMN_TYPES:
                raise SchemaError(f"{self.name}.{col}: unknown type {typ!r}")
            if col in seen:
                raise SchemaError(f"{self.name}: duplicate column {col!r}")
            seen.add(col)
        if not self.key_columns:
            raise SchemaError(f"{self.name}: key columns must be non-empty")
        for col in self.key_columns:
            if col not in seen:
                raise SchemaError(f"{self.name}: key column {col!r} not declared")
        if self.role not in ("data", "metadata"):
            raise SchemaError(f"{self.name}: role must be data or metadata")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.columns)

    def column_type(self, name: str) -> str:
        for col, typ in self.columns:
            if col == name:
                return typ
        raise UnknownColumn(f"{self.name}: no column {name!r}")

    def column_index(self, name: str) -> int:
        for i, (col, _) in enumerate(self.columns):
            if col == name:
                return i
        raise UnknownColumn(f"{self.name}: no column {name!r}")

    @property
    def value_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.column_names if c not in self.key_columns)


@dataclass(frozen=True, slots=True)
class Schema:
    tables: tuple[TableDef, ...]

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate table names in schema")

    def table_def(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"no table {name!r} in schema")

    def __contains__(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)


def parse_value(text: str, typ: str):
    """Parse one CSV cell. Empty text means None (absent value)."""
    if text == "":
        return None
    if typ == "integer":
        try:
            return int(text)
        except ValueError:
            raise TypeMismatch(f"{text!r} is not an integer")
    if typ == "real":
        try:
            v = float(text)
        except ValueError:
            raise TypeMismatch(f"{text!r} is not a real")
        if not math.isfinite(v):
            raise TypeMismatch(f"non-finite real {text!r} rejected")
        return v
    if typ == "boolean":
        if text == "true":
            return True
        if text == "false":
            return False
        raise TypeMismatch(f"{text!r} is not a boolean (use true/false)")
    return text  # text column


def format_value(value, typ: str) -> str:
    if value is None:
        return ""
    if typ == "boolean":
        return "true" if value else "false"
    if typ == "real":
        return repr(float(value))
    return str(value)


class DataTable:
    """Immutable typed table with a hash index on the key tuple."""

    __slots__ = ("table_def", "rows", "_key_index")

    def __init__(self, table_def: TableDef, rows: list[tuple]):
        self.table_def = table_def
        self.rows = rows
        key_idx = [table_def.column_index(c) for c in table_def.key_columns]
        index = {}
        for rownum, row in enumerate(rows):
            key = tuple(row[i] for i in key_idx)
            if any(v is None for v in key):
                raise TypeMismatch(
                    f"{table_def.name} row {rownum}: key column is empty", row=rownum
                )
            if key in index:
                raise DuplicateKey(
                    f"{table_def.name} row {rownum}: duplicate key {key}", row=rownum
                )
            index[key] = rownum
        self._key_index = index

    @property
    def name(self) -> str:
        return self.table_def.name

    def __len__(self) -> int:
        return len(self.rows)

    def lookup_key(self, key: tuple):
        """Row with the given key tuple, or None."""
        i = self._key_index.get(key)
        return None if i is None else self.rows[i]

    def column(self, name: str) -> list:
        i = self.table_def.column_index(name)
        return [row[i] for row in self.rows]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DataTable)
            and self.table_def == other.table_def
            and self.rows == other.rows
        )

    def __hash__(self):  # pragma: no cover - tables are not dict keys
        return id(self)


def load_table(path: str | Path, table_def: TableDef) -> DataTable:
    """Load and type-check a CSV file against its table definition.

    The header row must match the declared column order exactly. Every cell
    is parsed per its column type; violations abort the load naming the
    offending row and column.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        return _load_table_stream(fh, table_def, str(path))


def loads_table(text: str, table_def: TableDef) -> DataTable:
    return _load_table_stream(io.StringIO(text), table_def, "<string>")


def _load_table_stream(fh, table_def: TableDef, source: str) -> DataTable:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumn(f"{source}: empty file, header row required")
    expected = list(table_def.column_names)
    if header != expected:
        raise MissingColumn(
            f"{source}: header {header} does not match schema columns {expected}"
        )
    types = [typ for _, typ in table_def.columns]
    rows = []
    for rownum, cells in enumerate(reader):
        if len(cells) != len(types):
            raise MissingColumn(
                f"{source} row {rownum}: expected {len(types)} cells, got {len(cells)}"
            )
        parsed = []
        for col_i, (cell, typ) in enumerate(zip(cells, types)):
            try:
                parsed.append(parse_value(cell, typ))
            except TypeMismatch as exc:
                raise TypeMismatch(
                    f"{source} row {rownum}, column "
                    f"{table_def.column_names[col_i]!r}: {exc}",
                    row=rownum,
                    column=table_def.column_names[col_i],
                ) from None
        rows.append(tuple(parsed))
    return DataTable(table_def, rows)


def save_table(table: DataTable, path: str | Path) -> None:
    """Write a table in the canonical CSV dialect (header, \\n endings)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_table(table))


def dumps_table(table: DataTable) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.table_def.column_names)
    types = [typ for _, typ in table.table_def.columns]
    for row in table.rows:
        writer.writerow([format_value(v, t) for v, t in zip(row, types)])
    return out.getvalue()


def select(table: DataTable, conditions: list[tuple[str, object]]) -> list[tuple]:
    """Rows matching every (column, value) equality condition, in table order.

    A full key match uses the hash index; anything else is a scan.
    """
    for col, _ in conditions:
        table.table_def.column_index(col)  # raises UnknownColumn
    if conditions and {c for c, _ in conditions} == set(table.table_def.key_columns):
        by_col = dict(conditions)
        key = tuple(by_col[c] for c in table.table_def.key_columns)
        row = table.lookup_key(key)
        return [] if row is None else [row]
    idx_val = [(table.table_def.column_index(c), v) for c, v in conditions]
    return [row for row in table.rows if all(row[i] == v for i, v in idx_val)]


def table_stats(table: DataTable) -> dict:
    """Row count plus per-column distinct counts (None excluded)."""
    distinct = {}
    for i, (col, _) in enumerate(table.table_def.columns):
        distinct[col] = len({row[i] for row in table.rows if row[i] is not None})
    return {"row_count": len(table.rows), "distinct_counts": distinct}


# --- schema manifest ------------------------------------------------------


def parse_schema_manifest(text: str) -> Schema:
    """Parse the stanza-per-table schema manifest."""
    tables = []
    current: dict | None = None

    def finish():
        nonlocal current
        if current is None:
            return
        if "columns" not in current:
            raise SchemaError(f"table {current['name']}: missing columns line")
        if "keys" not in current:
            raise SchemaError(f"table {current['name']}: missing keys line")
        domain = current.get("domain")
        if domain is not None:
            value_cols = [
                (c, t) for c, t in current["columns"] if c not in current["keys"]
            ]
            if len(value_cols) != 1:
                raise SchemaError(
                    f"table {current['name']}: domain requires one value column"
                )
            vtype = value_cols[0][1]
            domain = tuple(parse_value(v, vtype) for v in domain)
        tables.append(
            TableDef(
                name=current["name"],
                columns=tuple(current["columns"]),
                key_columns=tuple(current["keys"]),
                role=current["role"],
                domain=domain,
            )
        )
        current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "table":
            finish()
            if len(parts) != 3:
                raise SchemaError(f"line {lineno}: expected 'table <name> <data|metadata>'")
            current = {"name": parts[1], "role": parts[2]}
        elif parts[0] == "columns":
            if current is None:
                raise SchemaError(f"line {lineno}: columns outside a table stanza")
            cols = []
            for spec in parts[1:]:
                if ":" not in spec:
                    raise SchemaError(f"line {lineno}: column spec {spec!r} needs name:type")
                name, typ = spec.split(":", 1)
                cols.append((name, typ))
            current["columns"] = cols
        elif parts[0] == "keys":
            if current is None:
                raise SchemaError(f"line {lineno}: keys outside a table stanza")
            current["keys"] = parts[1:]
        elif parts[0] == "domain":
            if current is None:
                raise SchemaError(f"line {lineno}: domain outside a table stanza")
            rest = line[len("domain") :].strip()
            current["domain"] = tuple(v.strip() for v in rest.split(",") if v.strip())
        else:
            raise SchemaError(f"line {lineno}: unknown directive {parts[0]!r}")
    finish()
    return Schema(tables=tuple(tables))


def format_schema_manifest(schema: Schema) -> str:
    chunks = []
    for t in schema.tables:
        cols = " ".join(f"{c}:{typ}" for c, typ in t.columns)
        stanza = f"table {t.name} {t.role}\ncolumns {cols}\nkeys {' '.join(t.key_columns)}\n"
        if t.domain:
            stanza += f"domain {', '.join(str(v) for v in t.domain)}\n"
        chunks.append(stanza)
    return "\n".join(chunks)


@dataclass(slots=True)
class Database:
    """A schema plus one loaded table per definition."""

    schema: Schema
    tables: dict[str, DataTable] = field(default_factory=dict)

    def table(self, name: str) -> DataTable:
        if name not in self.tables:
            raise SchemaError(f"no loaded table {name!r}")
        return self.tables[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tables


def load_data_dir(data_dir: str | Path) -> Database:
    """Load the schema manifest and every table CSV from a directory."""
    data_dir = Path(data_dir)
    manifest = data_dir / SCHEMA_FILENAME
    if not manifest.exists():
        raise SchemaError(f"no schema manifest at {manifest}")
    schema = parse_schema_manifest(manifest.read_text(encoding="utf-8"))
    db = Database(schema=schema)
    for tdef in schema.tables:
        csv_path = data_dir / f"{tdef.name}.csv"
        if not csv_path.exists():
            raise MissingColumn(f"table {tdef.name}: no file {csv_path}")
        db.tables[tdef.name] = load_table(csv_path, tdef)
    return db


def save_data_dir(db: Database, data_dir: str | Path) -> None:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    (data_dir / SCHEMA_FILENAME).write_text(
        format_schema_manifest(db.schema), encoding="utf-8"
    )
    for name, table in db.tables.items():
        save_table(table, data_dir / f"{name}.csv")
