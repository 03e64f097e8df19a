import numpy as np
import pytest

from kbc.datastore import Database, DataTable, Schema, TableDef


def make_db(*table_specs) -> Database:
    """Build an in-memory database from table spec dicts."""
    defs = []
    tables = {}
    for spec in table_specs:
        tdef = TableDef(
            name=spec["name"],
            columns=tuple(spec["columns"]),
            key_columns=tuple(spec["keys"]),
            role=spec.get("role", "data"),
            domain=spec.get("domain"),
        )
        defs.append(tdef)
        tables[tdef.name] = DataTable(tdef, list(spec["rows"]))
    db = Database(schema=Schema(tables=tuple(defs)))
    db.tables = tables
    return db


def label_table(name, rows, label_col="label"):
    """Boolean label family table spec: (sample_id, label, value)."""
    return dict(
        name=name,
        columns=(("sample_id", "integer"), (label_col, "text"), ("value", "boolean")),
        keys=("sample_id", label_col),
        rows=rows,
    )


def two_sample_db() -> Database:
    """Two samples, two affordances, two attributes, fully observed."""
    aff = []
    att = []
    for s in (0, 1):
        aff += [(s, "travel", s == 0), (s, "swim", True)]
        att += [(s, "sunny", s == 1), (s, "warm", False)]
    return make_db(label_table("hasAffordance", aff), label_table("hasAttribute", att))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene_dir():
    from pathlib import Path

    import kbc

    return Path(kbc.__file__).parent / "fixtures" / "scene"


@pytest.fixture(scope="session")
def scene_rules_path():
    from pathlib import Path

    import kbc

    return Path(kbc.__file__).parent / "fixtures" / "scene_rules.kbr"


@pytest.fixture(scope="session")
def queries_dir():
    from pathlib import Path

    import kbc

    return Path(kbc.__file__).parent / "fixtures" / "queries"
