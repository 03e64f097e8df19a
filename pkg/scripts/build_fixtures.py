#!/usr/bin/env python3
"""Regenerate the bundled fixtures under src/kbc/fixtures/.

Deterministic: the scene dataset comes from the synth generator at a fixed
seed; the metadata tables and query files are written verbatim below.
"""

from pathlib import Path

from kbc.datastore import (
    DataTable,
    TableDef,
    format_schema_manifest,
    parse_schema_manifest,
    save_table,
)
from kbc.synth import generate, scene_spec

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "kbc" / "fixtures"

# geolocations are "lat,long" text; distances drive the nearBy built-in
PLACES = {
    "Fisherman's Wharf": (37.8080, -122.4177),
    "Boston": (42.3601, -71.0589),
    "AT&T Plaza": (41.8827, -87.6233),
    "Seattle": (47.6062, -122.3321),
    "Waikiki": (21.2793, -157.8292),
}


def _ll(lat, lon) -> str:
    return f"{lat},{lon}"


METADATA_TABLES = {
    "hasLocation": dict(
        columns=(("sample_id", "integer"), ("latlong", "text")),
        keys=("sample_id",),
        rows=[
            (0, _ll(37.8085, -122.4105)),   # wharf area, near the mall
            (1, _ll(42.3581, -71.0636)),    # central Boston
            (2, _ll(42.4000, -71.1000)),    # greater Boston
            (3, _ll(41.8823, -87.6255)),    # by the plaza
            (4, _ll(21.2810, -157.8310)),   # Waikiki beach
            (5, _ll(47.6090, -122.3350)),   # Seattle
            (6, _ll(47.6150, -122.3200)),   # Seattle
            (7, _ll(37.8300, -122.3700)),   # wharf-ish but no mall nearby
        ],
    ),
    "hasDate": dict(
        columns=(
            ("sample_id", "integer"),
            ("day", "integer"),
            ("month", "text"),
            ("year", "integer"),
        ),
        keys=("sample_id",),
        rows=[
            (5, 14, "August", 2013),
            (6, 2, "July", 2014),
        ],
    ),
    "geoName": dict(
        columns=(("name", "text"), ("latlong", "text")),
        keys=("name",),
        rows=[(name, _ll(*coords)) for name, coords in sorted(PLACES.items())],
    ),
    "mall": dict(
        columns=(("name", "text"), ("latlong", "text"), ("zip", "text")),
        keys=("name",),
        rows=[
            ("Pier 39 Mall", _ll(37.8087, -122.4098), "94133"),
            ("Downtown Crossing", _ll(42.3555, -71.0607), "02111"),
        ],
    ),
    "hotel": dict(
        columns=(
            ("name", "text"),
            ("latlong", "text"),
            ("date", "text"),
            ("price", "integer"),
            ("phone", "text"),
        ),
        keys=("name",),
        rows=[
            ("Harborview Hotel", _ll(42.3601, -71.0589), "2014/03/02", 180, "617-555-0141"),
            ("Pier Inn", _ll(37.8080, -122.4177), "2014/05/11", 210, "415-555-0178"),
        ],
    ),
    "bar": dict(
        columns=(
            ("name", "text"),
            ("latlong", "text"),
            ("price", "integer"),
            ("phone", "text"),
        ),
        keys=("name",),
        rows=[
            ("Millennium Taproom", _ll(41.8819, -87.6278), 3, "312-555-0109"),
            ("Wharfside Ale House", _ll(37.8091, -122.4160), 2, "415-555-0132"),
        ],
    ),
    "temperature": dict(
        columns=(("location", "text"), ("degree", "real"), ("date", "text")),
        keys=("location", "date"),
        rows=[
            ("Waikiki", 25.6, "2013/12/25"),
            ("Boston", -2.0, "2013/12/25"),
            ("Seattle", 6.3, "2013/12/25"),
        ],
    ),
}

QUERIES = {
    "q1_mall_near_wharf": """\
# a modern-looking mall near the wharf
hasLocation(img, latlong1)
mall(mall, latlong2, zip)
geoName("Fisherman's Wharf", latlong3)
hasAttribute(img, "indoor_lighting")
hasAttribute(img, "glossy")
nearBy(latlong1, latlong2, "1km")
nearBy(latlong1, latlong3, "20km")
=> answer(img, mall, zip)
""",
    "q2_baseball_in_boston": """\
# somewhere in Boston to play baseball
hasAffordance(img, "playing_baseball")
hasLocation(img, latlong1)
geoName("Boston", latlong2)
nearBy(latlong1, latlong2, "1km")
=> answer(img, latlong1)
""",
    "q3_boston_hotel_new_furniture": """\
# a Boston hotel that looks newly furnished
hasLocation(img, latlong1)
hasAttribute(img, "glossy")
geoName("Boston", latlong2)
nearBy(latlong1, latlong2, "20km")
hotel(hotel, latlong2, date, price, phone)
=> answer(img, hotel, price, phone)
""",
    "q4_cozy_bar_near_plaza": """\
# a cozy bar for a beer near the plaza
hasAttribute(img, "cluttered_space")
hasLocation(img, latlong1)
bar(bar, latlong2, price, phone)
geoName("AT&T Plaza", latlong3)
nearBy(latlong1, latlong2, "1km")
nearBy(latlong1, latlong3, "1km")
=> answer(img, bar, price, phone)
""",
    "q5_warm_beach_christmas": """\
# a sunny, warm beach on Christmas Day 2013
sceneCategory(img, "beach")
hasAttribute(img, "sunny")
hasAttribute(img, "warm")
hasLocation(img, latlong1)
geoName(location, latlong2)
nearBy(latlong1, latlong2, "1km")
temperature(location, degree, "2013/12/25")
=> answer(img, location, degree, latlong2)
""",
    "q6_sunny_seattle_august": """\
# sunny Seattle pictures taken in August
hasAttribute(img, "sunny")
hasLocation(img, latlong1)
hasDate(img, day, "August", year)
geoName("Seattle", latlong2)
nearBy(latlong1, latlong2, "20km")
=> answer(img, day, "August", year)
""",
}


def main():
    scene_dir = FIXTURES / "scene"
    scene_dir.mkdir(parents=True, exist_ok=True)
    spec = scene_spec()
    summary = generate(spec, scene_dir)
    print("scene dataset:", summary)

    # append metadata tables to the generated schema
    schema = parse_schema_manifest((scene_dir / "schema.txt").read_text())
    defs = list(schema.tables)
    for name, meta in METADATA_TABLES.items():
        tdef = TableDef(
            name=name,
            columns=meta["columns"],
            key_columns=meta["keys"],
            role="metadata",
        )
        defs.append(tdef)
        save_table(DataTable(tdef, meta["rows"]), scene_dir / f"{name}.csv")
    from kbc.datastore import Schema

    (scene_dir / "schema.txt").write_text(
        format_schema_manifest(Schema(tables=tuple(defs))), encoding="utf-8"
    )

    # the full scene rule file doubles as the language-conformance fixture
    rules_text = (scene_dir / "rules.kbr").read_text(encoding="utf-8")
    (FIXTURES / "scene_rules.kbr").write_text(rules_text, encoding="utf-8")

    qdir = FIXTURES / "queries"
    qdir.mkdir(parents=True, exist_ok=True)
    for name, text in QUERIES.items():
        (qdir / f"{name}.kbq").write_text(text, encoding="utf-8")
    print("queries:", sorted(p.name for p in qdir.glob("*.kbq")))


if __name__ == "__main__":
    main()
