import json

import pytest

from dcbo.cli import (
    OUTPUT_ENV,
    TRACE_HEADER,
    config_from_args,
    build_parser,
    format_trace,
    main,
    parse_trace,
    summarize_directory,
)
from dcbo import builtin
from dcbo.metrics import aggregate, evaluate_trace

SMALL = ["--H", "2", "--n-mc", "10", "--n-draws", "4", "--oracle-mc", "300", "--workers", "1"]


def _run(tmp_path, *extra, name="out"):
    out = tmp_path / name
    code = main(["run", "--experiment", "stat", "--out", str(out), *SMALL, *extra])
    return code, out


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    args = ["--methods", "dcbo,cbo,abo,bo", "--replicates", "2", "--seed", "7"]
    c1, a = _run(base, *args, name="a")
    c2, b = _run(base, *args, name="b")
    assert c1 == c2 == 0
    return a, b


def test_file_count_and_summary(two_runs):
    a, _ = two_runs
    traces = sorted(a.glob("trace_*.csv"))
    assert len(traces) == 8
    assert (a / "trace_stat_dcbo_r000.csv").exists()
    summary = json.loads((a / "summary.json").read_text())
    assert set(summary) == {"dcbo", "cbo", "abo", "bo"}
    for row in summary.values():
        assert {"gap_mean", "gap_stderr", "optimal_set_pct", "per_slice"} <= set(row)
        assert 0 <= row["gap_mean"] <= 1 and 0 <= row["optimal_set_pct"] <= 100


def test_byte_reproducible(two_runs):
    a, b = two_runs
    for path in sorted(a.glob("*")):
        assert path.read_bytes() == (b / path.name).read_bytes()


def test_trace_schema(two_runs):
    a, _ = two_runs
    lines = (a / "trace_stat_bo_r001.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    row = lines[1].split(",")
    assert row[0] == "1" and row[1] == "bo" and row[4] == "X+Z"
    assert len(row[5].split(";")) == 2


def test_trace_round_trip(two_runs):
    a, _ = two_runs
    text = (a / "trace_stat_dcbo_r000.csv").read_text()
    assert format_trace(parse_trace(text)) == text


def test_summary_matches_trace_files(two_runs):
    a, _ = two_runs
    summary = json.loads((a / "summary.json").read_text())
    assert summarize_directory("stat", a, oracle_mc=300) == summary
    rows = summary["dcbo"]["per_slice"]
    assert [r["t"] for r in rows] == [0, 1, 2]


def test_single_replicate_has_zero_stderr(tmp_path, capsys):
    code, out = _run(tmp_path, "--methods", "cbo,bo", "--replicates", "1")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert all(row["gap_stderr"] == 0 for row in summary.values())
    stdout = capsys.readouterr().out
    assert "gap" in stdout and "%set" in stdout and "cbo" in stdout


def test_summary_gap_is_aggregate_of_trace_files(two_runs):
    a, _ = two_runs
    summary = json.loads((a / "summary.json").read_text())
    exp = builtin("stat")
    per_rep = []
    for r in range(2):
        trace = parse_trace((a / f"trace_stat_bo_r{r:03d}.csv").read_text())
        scores = evaluate_trace(exp, trace, n_mc=300)
        per_rep.append(sum(s.gap for s in scores) / len(scores))
    assert (summary["bo"]["gap_mean"], summary["bo"]["gap_stderr"]) == aggregate(per_rep)


def test_unknown_experiment_lists_names(tmp_path, capsys):
    code = main(["run", "--experiment", "nope", "--out", str(tmp_path)])
    assert code != 0
    err = capsys.readouterr().err
    assert "experiment" in err
    for name in ("stat", "noisy", "miss", "multiv", "ind", "nonstat"):
        assert name in err


@pytest.mark.parametrize("flag, field", [
    (["--replicates", "0"], "replicates"),
    (["--methods", "dcbo,magic"], "methods"),
    (["--H", "0"], "H"),
    (["--scm-noise-var", "abc"], "scm_noise_var"),
])
def test_invalid_config_names_field(tmp_path, capsys, flag, field):
    code = main(["run", "--experiment", "stat", "--out", str(tmp_path), *flag])
    assert code == 2
    assert field in capsys.readouterr().err


def test_output_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "envdir"))
    args = build_parser().parse_args(["run", "--experiment", "stat"])
    assert config_from_args(args).out == tmp_path / "envdir"


def test_scm_noise_flag():
    p = build_parser()
    cfg = config_from_args(p.parse_args(["run", "--experiment", "stat", "--scm-noise-var", "auto"]))
    assert cfg.scm_noise_var is None and cfg.method_config("dcbo", 0).scm_noise_var is None
    cfg = config_from_args(p.parse_args(["run", "--experiment", "stat", "--scm-noise-var", "0.5"]))
    assert cfg.scm_noise_var == 0.5


def test_list_table_and_json(capsys):
    assert main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 7
    stat_row = next(line for line in lines if line.startswith("stat "))
    assert stat_row.split()[1] == "3" and stat_row.split()[2].startswith("10")
    assert next(line for line in lines if line.startswith("miss")).split()[1] == "6"
    assert main(["list", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["name"] for r in rows] == ["stat", "noisy", "miss", "multiv", "ind", "nonstat"]


def test_parallel_workers_match_serial(tmp_path):
    args = ["--methods", "cbo,bo", "--replicates", "2", "--seed", "3"]
    c1, a = _run(tmp_path, *args, name="serial")
    out = tmp_path / "pool"
    c2 = main(["run", "--experiment", "stat", "--out", str(out), *SMALL[:-2], "--workers", "2", *args])
    assert c1 == c2 == 0
    for path in sorted(a.glob("*")):
        assert path.read_bytes() == (out / path.name).read_bytes()
