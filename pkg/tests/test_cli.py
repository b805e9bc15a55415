import csv
import json
import math

import pytest
from click.testing import CliRunner

from poisson_disorder import artifacts, model
from poisson_disorder.cli import main

REFL = ["--lambda", "1", "--mu", "2", "--c", "1", "--m", "0", "--pi", "0.2"]
REFS = ["--lambda", "0.15", "--mu", "1.5", "--c", "0.7", "--m", "0.9", "--pi", "0.0"]


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.setenv(artifacts.CACHE_ENV, str(tmp_path / "cache"))
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    invoke.out = tmp_path / "out"
    return invoke


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_writes_report_and_caches(run):
    res = run("solve", *REFL, "--nx", 40, "--epsilon", 0.025, "--output-dir", run.out)
    assert res.exit_code == 0, res.output
    first = json.loads(res.stdout)
    assert first == {**first, "n_final": 10, "cache_hit": False}
    report = json.loads((run.out / "report.json").read_text())
    assert report["residual_budget"]["total"] > 0.025
    assert len(_rows(run.out / "grid.csv")) == 40 * 40
    manifest = json.loads((run.out / "solve.manifest.json").read_text())
    assert manifest["command"] == "solve" and "grid.csv" in manifest["outputs"]
    again = json.loads(run("solve", *REFL, "--nx", 40, "--epsilon", 0.025, "--output-dir", run.out).stdout)
    assert again["cache_hit"] and again["cache_key"] == first["cache_key"]


def test_large_epsilon_gives_zero_grid(run):
    res = run("solve", *REFL, "--nx", 20, "--epsilon", 10, "--output-dir", run.out)
    assert json.loads(res.stdout)["n_final"] == 0
    assert all(float(r["v"]) == 0.0 for r in _rows(run.out / "grid.csv"))
    res = run("boundary", *REFL, "--nx", 20, "--epsilon", 10, "--output-dir", run.out)
    assert res.exit_code == 0
    assert "warning" in res.stderr
    assert all(float(r["gamma"]) == 0.0 for r in _rows(run.out / "boundary.csv"))


def test_validation_error_exit_code(run):
    res = run("solve", "--lambda", "1", "--mu", "0.5", "--c", "1", "--m", "0", "--output-dir", run.out)
    assert res.exit_code == 2
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"] == "MU_NOT_GT_ONE"


def test_budget_exit_code(run):
    res = run("solve", *REFL, "--nx", 20, "--epsilon", 1e-9, "--max-iter", 5, "--output-dir", run.out)
    assert res.exit_code == 4


def test_missing_boundary_exit_code(run):
    res = run("simulate", *REFL, "--n-paths", 100, "--output-dir", run.out)
    assert res.exit_code == 3
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "MISSING_ARTIFACT"


def test_config_file_and_unknown_keys(run, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"params": model.ref_l().to_dict(), "grid": {"nx": 24}, "epsilon": 0.5}))
    res = run("solve", "--config", cfg, "--output-dir", run.out)
    assert res.exit_code == 0
    assert json.loads((run.out / "report.json").read_text())["spec"]["nx"] == 24
    cfg.write_text(json.dumps({"params": model.ref_l().to_dict(), "colour": 1}))
    assert run("solve", "--config", cfg, "--output-dir", run.out).exit_code == 2


def test_boundary_methods_large_regime(run):
    common = [*REFL, "--nx", 80, "--epsilon", 0.025, "--output-dir", run.out]
    for method in ("grid", "c"):
        res = run("boundary", *common, "--method", method)
        assert res.exit_code == 0, res.output
        split = json.loads((run.out / "split.json").read_text())
        assert split["certificate"]["x1"] == pytest.approx(math.sqrt(2) / 2, abs=0.2)
        rows = _rows(run.out / "boundary.csv")
        h = 3 * math.sqrt(2) / 79
        for r in rows:
            x = float(r["x"])
            if x <= math.sqrt(2) / 2:
                assert float(r["gamma"]) == pytest.approx(math.sqrt(2) - x, abs=2 * h)


def test_boundary_wrong_regime(run):
    res = run("boundary", *REFS, "--nx", 20, "--method", "c", "--output-dir", run.out)
    assert res.exit_code == 2
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "WRONG_REGIME"


def test_boundary_split_small_regime(run):
    res = run("boundary", *REFS, "--nx", 96, "--window", 0.6, "--epsilon", 0.01, "--split", "--method", "d",
              "--output-dir", run.out)
    assert res.exit_code == 0, res.output
    split = json.loads((run.out / "split.json").read_text())
    assert split["method"] == "method_d" and split["regime"] == "SmallLambda"
    assert split["xi_e"] == pytest.approx(0.022728, abs=2 * 0.6 / 95)
    labels = {r["classification"] for r in _rows(run.out / "boundary.csv")}
    assert {"X", "E"} <= labels


def test_simulate_fixed_time(run):
    res = run("simulate", *REFL, "--policy", "fixed", "--fixed-time", 0, "--n-paths", 5000, "--output-dir", run.out)
    assert res.exit_code == 0
    risk = json.loads((run.out / "risk.json").read_text())["risk"]
    assert abs(risk["mean"] - 0.8) <= 3 * risk["stderr"]


def test_simulate_boundary_pipeline(run, tmp_path):
    common = [*REFL, "--nx", 80, "--epsilon", 0.025, "--output-dir", run.out]
    assert run("boundary", *common).exit_code == 0
    per_path = tmp_path / "paths.csv"
    res = run("simulate", *common, "--n-paths", 2000, "--seed", 3, "--sweep", "--sweep-paths", 200,
              "--sandwich", "--dynkin", "--exit-bound", "--per-path", per_path)
    assert res.exit_code == 0, res.output
    rep = json.loads((run.out / "risk.json").read_text())
    assert 0 < rep["theoretical_risk"] < 0.8
    assert abs(rep["risk"]["mean"] - rep["theoretical_risk"]) < 0.1
    assert len(rep["sweep"]) == 19
    assert rep["sandwich"]["lower_violations"] == 0 and rep["sandwich"]["upper_violations"] == 0
    assert rep["exit_bound"]["passed"]
    assert len(_rows(per_path)) == 2000
    again = run("simulate", *common, "--n-paths", 2000, "--seed", 3)
    assert json.loads(again.stdout) == rep["risk"]


def test_simulate_rejects_tampered_boundary(run):
    common = [*REFL, "--nx", 40, "--epsilon", 0.5, "--output-dir", run.out]
    assert run("boundary", *common).exit_code == 0
    path = run.out / "boundary.csv"
    path.write_text(path.read_text() + "9.0,0.0,\n")
    res = run("simulate", *common, "--n-paths", 100)
    assert res.exit_code == 3
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "CACHE_MISMATCH"


def test_filter_command(run, tmp_path):
    events = tmp_path / "events.txt"
    events.write_text("0.25\n0.6\n")
    res = run("filter", *REFL, "--events", events, "--t-end", 1.0, "--report-step", 0.5, "--output-dir", run.out)
    assert res.exit_code == 0, res.output
    rows = _rows(run.out / "filter.csv")
    assert [r["event"] for r in rows] == ["0", "1", "0", "1", "0"]
    assert float(rows[0]["phi0"]) == pytest.approx(0.25)
    assert float(rows[0]["phi2"]) == pytest.approx(float(rows[0]["phi0"]))
    res = run("filter", *REFL, "--events", events, "--atoms", "1,2.5,3", "--weights", "0.2,0.3,0.5",
              "--output-dir", run.out)
    assert res.exit_code == 0
    assert "phi3" in _rows(run.out / "filter.csv")[0]


def test_filter_missing_events(run, tmp_path):
    res = run("filter", *REFL, "--events", tmp_path / "nope.txt", "--output-dir", run.out)
    assert res.exit_code == 3


def test_smoothfit_command(run):
    res = run("smoothfit", *REFL, "--nx", 80, "--epsilon", 0.025, "--output-dir", run.out)
    assert res.exit_code == 0, res.output
    summary = json.loads((run.out / "smoothfit.json").read_text())
    assert summary["exit"] == 0
    assert summary["undetermined"] <= 0.05 * summary["n"]
    res = run("smoothfit", *REFL, "--nx", 40, "--epsilon", 0.025, "--output-dir", run.out)
    assert json.loads((run.out / "smoothfit.json").read_text())["insufficient_resolution"]


def test_risk_curve_command(run):
    res = run("risk-curve", *REFL, "--nx", 60, "--epsilon", 0.025, "--pis", "0,0.2,0.9", "--output-dir", run.out)
    assert res.exit_code == 0, res.output
    rows = _rows(run.out / "risk_curve.csv")
    u = [float(r["U"]) for r in rows]
    assert u[0] > u[1] > 0
    assert u[2] == pytest.approx(0.1)
