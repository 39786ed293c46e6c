import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mflab.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, main
from mflab.config import ExperimentConfig, load_config, make_config, parse_config_text, parse_value
from mflab.errors import ConfigError, DivergenceError, InvalidInputError
from mflab.experiments import REGISTRY, Experiment, default_config_path, load_default, run_experiment, workers
from mflab.results import ResultTable, format_value, read_csv, write_table
from mflab.svg import Chart, render, write_chart


# --------------------------------------------------------------------------
# config


@pytest.mark.parametrize(
    "text, expected",
    [("1", 1), ("2.5", 2.5), ("1e-3", 1e-3), ("true", True), ("No", False), ("[1, 2]", [1, 2]),
     ("quadratic(1.0)", "quadratic(1.0)"), ("exp", "exp"), ("'x'", "x")],
)
def test_parse_value(text, expected):
    assert parse_value(text) == expected


def test_parse_config_text_comments_and_order():
    vals = parse_config_text("# head\nexperiment = w2_contraction  # trailing\n\nh = 0.01\nU = quadratic(2.0)\n")
    assert list(vals) == ["experiment", "h", "U"]
    assert vals["U"] == "quadratic(2.0)"


@pytest.mark.parametrize("text", ["no equals sign", "1bad = 3", "h = 1\nh = 2"])
def test_parse_config_text_rejects(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


@pytest.mark.parametrize(
    "values",
    [{"h": 0.1}, {"experiment": "nope"}, {"experiment": "w2_contraction", "seed": -1},
     {"experiment": "w2_contraction", "seed": 2**64}, {"experiment": "w2_contraction", "h": 0.0},
     {"experiment": "w2_contraction", "N_list": 3, "replicas": -2}, {"experiment": "w2_contraction", "seed": True}],
)
def test_make_config_rejects(values):
    with pytest.raises(ConfigError):
        make_config(values, registry=REGISTRY)


def test_make_config_defaults_and_missing_key():
    cfg = make_config({"experiment": "w2_contraction"}, registry=REGISTRY)
    assert cfg.seed == 2024 and cfg.plots and cfg.out == "results"
    with pytest.raises(ConfigError, match="missing key"):
        cfg["A1"]
    assert "A1" not in cfg


def test_echo_is_sorted_and_complete():
    cfg = ExperimentConfig("x", 7, params={"b": 1, "a": 2})
    assert list(cfg.echo()) == ["experiment", "seed", "plots", "a", "b"]


def test_load_config_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_every_registry_entry_has_a_valid_default_config(name):
    cfg = load_default(name)
    assert cfg.experiment == name
    assert default_config_path(name).is_file()


def test_workers_env(monkeypatch):
    monkeypatch.setenv("MFLAB_THREADS", "3")
    assert workers() == 3
    monkeypatch.setenv("MFLAB_THREADS", "0")
    assert workers() == 1
    monkeypatch.setenv("MFLAB_THREADS", "many")
    with pytest.raises(ConfigError):
        workers()


# --------------------------------------------------------------------------
# results


@pytest.mark.parametrize("v, s", [(True, "1"), (3, "3"), (0.1, "0.10000000000000001"), (np.float64(2.0), "2"), ("H_A", "H_A")])
def test_format_value(v, s):
    assert format_value(v) == s


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False)), max_size=20))
def test_csv_round_trip_is_exact(rows):
    t = ResultTable("t", ["n", "x"])
    for r in rows:
        t.add(*r)
    back = read_csv(t.to_csv())
    assert [(a, float(c)) for a, c in back.rows] == [tuple(r) for r in rows]
    assert back.to_csv() == t.to_csv()


def test_add_named_fills_nan_and_rejects_bad_rows():
    t = ResultTable("t", ["a", "b"])
    t.add(b=2.0)
    assert math.isnan(t.rows[0][0]) and t.rows[0][1] == 2.0
    with pytest.raises(InvalidInputError):
        t.add(1.0)
    with pytest.raises(InvalidInputError):
        t.add(c=1.0)
    with pytest.raises(InvalidInputError):
        t.add(1.0, b=2.0)


def test_empty_table_header_only(tmp_path):
    t = ResultTable("empty", ["t", "v"])
    assert t.to_csv() == "t,v\n"
    csv_path, meta_path = write_table(t, tmp_path)
    assert csv_path.read_text() == "t,v\n"
    meta = json.loads(meta_path.read_text())
    assert meta["csv_sha256"] == t.digest() and meta["status"] == "ok"


def test_passed_requires_ok_status_and_all_checks():
    t = ResultTable("t", ["x"])
    t.check("a", True, 1.0, "")
    assert t.passed
    t.check("b", False, 2.0, "")
    assert not t.passed
    assert t.checks[1].line().startswith("FAIL b: 2")


# --------------------------------------------------------------------------
# svg


def test_render_contains_series_and_skips_bad_points():
    ch = Chart("c", "title <&>", "x", "y", logy=True)
    ch.add("data", [1, 2, 3], [1.0, float("nan"), -1.0])
    ch.add("envelope", [1, 2, 3], [1, 0.5, 0.25], "dashed")
    svg = render(ch)
    assert svg.startswith("<svg") and 'viewBox="0 0 800 600"' in svg
    assert "title &lt;&amp;&gt;" in svg and "envelope" in svg and "stroke-dasharray" in svg
    assert "nan" not in svg.lower().replace("viewbox", "")


def test_render_empty_and_constant():
    assert render(Chart("c", "t", "x", "y")).endswith("</svg>\n")
    assert "polyline" in render(Chart("c", "t", "x", "y").add("flat", [0, 1], [2, 2]))


def test_write_chart(tmp_path):
    p = write_chart(Chart("plot", "t", "x", "y").add("s", [0, 1], [0, 1], "points"), tmp_path)
    assert p.name == "plot.svg" and "<circle" in p.read_text()


# --------------------------------------------------------------------------
# experiments and cli


def _write_cfg(path, text):
    path.write_text(text)
    return path


def test_run_experiment_unknown_name():
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig("nope"))


def test_divergence_gives_partial_table(monkeypatch):
    def boom(cfg, table):
        table.add(0.0, 1.0)
        raise DivergenceError("blew up", time=0.5, replica=3)

    monkeypatch.setitem(REGISTRY, "boom", Experiment("boom", "always diverges", ("t", "x"), boom))
    table = run_experiment(ExperimentConfig("boom"))
    assert table.status == "diverged" and not table.passed
    assert len(table.rows) == 2 and all(math.isnan(v) for v in table.rows[1])
    assert table.meta["error"] == {"message": "blew up", "time": 0.5, "replica": 3, "particle": None}


def test_cli_list(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert len(out) == len(REGISTRY) and out[0].startswith("oracle_linear_gaussian")


def test_cli_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    cfg = default_config_path("index_bound_table")
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(tmp_path / "b"), "--no-plots"]) == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "index_bound_table.csv").read_bytes() == (b / "index_bound_table.csv").read_bytes()
    assert (a / "index_bound_table.svg").is_file() and not (b / "index_bound_table.svg").exists()
    assert "PASS" in capsys.readouterr().out


def test_cli_seed_override_changes_stochastic_output(tmp_path):
    cfg = _write_cfg(tmp_path / "g.cfg", "experiment = oracle_geometric\na1 = -1.0\na2 = 1.0\nsigma0 = 0.5\nh = 1e-3\nreplicas = 5\nrecord_every = 100\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "7"]) == EXIT_OK
    assert (tmp_path / "a/oracle_geometric.csv").read_bytes() != (tmp_path / "b/oracle_geometric.csv").read_bytes()
    meta = json.loads((tmp_path / "b/oracle_geometric.meta.json").read_text())
    assert meta["config"]["seed"] == 7


@pytest.mark.parametrize(
    "text",
    ["experiment = nope\n", "experiment = jacobian_decay\nmodel = langevin\nU = unknown(1)\n",
     "experiment = w2_contraction\nh = -1\n", "experiment = w2_contraction\ndim = 2\n",
     "experiment = oracle_geometric\na1 = -1.0\na2 = 1.0\nsigma0 = 0.5\nt_end = 1.0\nh = 0.3\n"],
)
def test_cli_config_errors_exit_2(tmp_path, text, capsys):
    cfg = _write_cfg(tmp_path / "bad.cfg", text)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_check(tmp_path, capsys):
    assert main(["check", str(default_config_path("jacobian_decay"))]) == EXIT_OK
    assert main(["check", str(_write_cfg(tmp_path / "b.cfg", "experiment = w2_contraction\nmodel = weird\n"))]) == EXIT_CONFIG


def test_cli_io_error_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert main(["run", str(default_config_path("index_bound_table")), "--out", str(blocker / "sub")]) == EXIT_IO


def test_cli_divergence_exit_3(tmp_path):
    # a repulsive confinement overflows the Euler state long before t_end
    cfg = _write_cfg(
        tmp_path / "d.cfg",
        "experiment = jacobian_decay\nmodel = langevin\nU = quadratic(-400.0)\ndim = 1\nt_end = 1.0\nh = 0.01\nreplicas = 2\n",
    )
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DIVERGED
    meta = json.loads((tmp_path / "o/jacobian_decay.meta.json").read_text())
    assert meta["status"] == "diverged" and meta["error"]["message"]
