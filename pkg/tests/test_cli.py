import hashlib
import json
from pathlib import Path

import pytest

from kbc.cli import main
from kbc.grounder import factor_count_report
from kbc.kbio import load_kb, load_weights
from kbc.synth import generate, recovery_spec


@pytest.fixture(scope="module")
def mini_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("mini")
    generate(recovery_spec(samples=40, seed=11), d)
    return d


@pytest.fixture(scope="module")
def mini_kb(tmp_path_factory, mini_data):
    kb_dir = tmp_path_factory.mktemp("kb")
    code = main(
        [
            "pipeline",
            "--data-dir", str(mini_data),
            "--rules", str(mini_data / "rules.kbr"),
            "--out", str(kb_dir),
            "--epochs", "2",
            "--seed", "1",
        ]
    )
    assert code == 0
    return kb_dir


def test_pipeline_stats_match_recount(mini_data, mini_kb, capsys):
    manifest = json.loads((mini_kb / "manifest.json").read_text())
    from kbc.datastore import load_data_dir
    from kbc.predicates import build_registry
    from kbc.rulelang import parse_rule_file

    db = load_data_dir(mini_data)
    rules = parse_rule_file((mini_data / "rules.kbr").read_text())
    report = factor_count_report(rules, db, registry=build_registry(db))
    assert manifest["stats"] == report
    assert (mini_kb / "weights.tsv").exists()

    # graph index and weight-key table cross-check
    index_rows = (mini_kb / "graphs.tsv").read_text().splitlines()[1:]
    assert len(index_rows) == 40
    n_vars = sum(int(r.split("\t")[1]) for r in index_rows)
    n_factors = sum(int(r.split("\t")[2]) for r in index_rows)
    assert n_vars == report["n_variables"]
    assert n_factors == report["n_factors"]
    key_rows = (mini_kb / "weight_keys.tsv").read_text().splitlines()
    assert len(key_rows) == report["n_parameters"]


def test_pipeline_missing_rules(tmp_path, mini_data, capsys):
    code = main(
        [
            "pipeline",
            "--data-dir", str(mini_data),
            "--rules", str(tmp_path / "nope.kbr"),
            "--out", str(tmp_path / "kb"),
        ]
    )
    assert code != 0
    err = capsys.readouterr().err
    assert "nope.kbr" in err


def test_pipeline_dry_run(tmp_path, mini_data):
    out = tmp_path / "kb_dry"
    code = main(
        [
            "pipeline",
            "--data-dir", str(mini_data),
            "--rules", str(mini_data / "rules.kbr"),
            "--out", str(out),
            "--dry-run",
        ]
    )
    assert code == 0
    assert not (out / "weights.tsv").exists()
    assert (out / "manifest.json").exists()


def test_save_load_roundtrip_and_tamper(mini_kb, tmp_path):
    kb, manifest = load_kb(mini_kb)
    weights_file = mini_kb / "weights.tsv"
    digest = hashlib.sha256(weights_file.read_bytes()).hexdigest()
    assert digest == manifest["weights_sha256"]
    again = load_weights(weights_file)
    assert again.items_sorted() == kb.weights.items_sorted()

    # tamper: flip one byte of the weights file
    from kbc.errors import HashMismatch, VersionMismatch

    original = weights_file.read_bytes()
    weights_file.write_bytes(original.replace(b"0", b"1", 1))
    with pytest.raises(HashMismatch):
        load_kb(mini_kb)
    weights_file.write_bytes(original)

    # a newer major format version must be rejected
    mpath = mini_kb / "manifest.json"
    m = json.loads(mpath.read_text())
    m["format_version"] = "2.0"
    backup = mpath.read_text()
    mpath.write_text(json.dumps(m))
    with pytest.raises(VersionMismatch):
        load_kb(mini_kb)
    mpath.write_text(backup)


def test_ingest_reports_stats(mini_data, capsys):
    assert main(["ingest", "--data-dir", str(mini_data)]) == 0
    out = capsys.readouterr().out
    assert "hasAttribute" in out and "rows=" in out


def test_compile_reports(mini_data, tmp_path, capsys):
    code = main(
        [
            "compile",
            "--rules", str(mini_data / "rules.kbr"),
            "--data-dir", str(mini_data),
            "--out", str(tmp_path / "kb2"),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "variables" in out and "parameters" in out


def test_learn_writes_weights_and_metrics(mini_kb, tmp_path, capsys):
    out = tmp_path / "w.tsv"
    code = main(
        [
            "learn",
            "--kb", str(mini_kb),
            "--epochs", "1",
            "--seed", "2",
            "--out", str(out),
        ]
    )
    assert code == 0
    assert out.exists()
    metrics = json.loads(Path(str(out) + ".metrics.json").read_text())
    assert len(metrics) == 1 and "samples_per_sec" in metrics[0]


def test_query_command_text_and_json(mini_kb, tmp_path, capsys):
    qfile = tmp_path / "q.kbq"
    qfile.write_text('hasAttribute(i, "glossy")\n=> answer(i)\n')
    code = main(
        [
            "query",
            "--kb", str(mini_kb),
            "--query", str(qfile),
            "--top", "5",
            "--sweeps", "200",
            "--burn-in", "20",
            "--seed", "3",
        ]
    )
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(lines) == 5
    rank, tup, prob = lines[0].split("\t")
    assert rank == "1" and 0.0 <= float(prob) <= 1.0

    code = main(
        [
            "query",
            "--kb", str(mini_kb),
            "--query", str(qfile),
            "--top", "3",
            "--sweeps", "200",
            "--burn-in", "20",
            "--seed", "3",
            "--json",
        ]
    )
    assert code == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data) == 3 and data[0]["rank"] == 1


def test_oracle_command(mini_kb, mini_data, tmp_path, capsys):
    qfile = tmp_path / "q.kbq"
    qfile.write_text('hasAttribute(i, "glossy")\nhasAffordance(i, "swim")\n=> answer(i)\n')
    code = main(
        ["oracle", "--kb", str(mini_kb), "--sample", "0", "--query", str(qfile)]
    )
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    tup, prob = out[0].split("\t")
    assert tup == "0" and 0.0 <= float(prob) <= 1.0


def test_synth_command_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code = main(
            ["synth", "--template", "recovery", "--samples", "20", "--seed", "9",
             "--out", str(out)]
        )
        assert code == 0
    assert (a / "hasAttribute.csv").read_bytes() == (b / "hasAttribute.csv").read_bytes()


def test_bench_single_size_slope_na(capsys):
    code = main(["bench", "--scaling", "--sizes", "400", "--seed", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "slope: n/a" in out


def test_bench_invalid_sizes(capsys):
    code = main(["bench", "--scaling", "--sizes", "0"])
    assert code == 1  # InvalidSize is a usage error


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["compile"])  # missing required arguments
    assert exc.value.code == 1


def test_query_exit_code_for_bad_query(mini_kb, tmp_path, capsys):
    qfile = tmp_path / "bad.kbq"
    qfile.write_text('hasAttribute(i, "glossy")\n')  # no answer line
    code = main(["query", "--kb", str(mini_kb), "--query", str(qfile)])
    assert code == 2
