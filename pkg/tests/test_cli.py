import csv
import json

import numpy as np
import pytest

from conftest import make_theta
from panicfsv import dataio
from panicfsv.cli import main


@pytest.fixture
def sim_dir(tmp_path):
    dataio.write_theta(make_theta(3), tmp_path / "theta.csv")
    assert main(["simulate", "--theta", str(tmp_path / "theta.csv"), "--T", "40", "--K", "1",
                 "--seed", "3", "--out", str(tmp_path / "sim")]) == 0
    return tmp_path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_writes_returns_truth_and_echo(sim_dir):
    series = dataio.ingest_returns(sim_dir / "sim" / "returns.csv")
    assert (series.T, series.d_y, series.units) == (40, 3, "percent")
    truth = _rows(sim_dir / "sim" / "truth.csv")
    assert truth[0][:2] == ["date", "regime"] and len(truth) == 41
    echo = json.loads((sim_dir / "sim" / "config_echo.json").read_text())
    assert echo["simulate"]["seed"] == 3 and echo["model"]["d_y"] == 3


def test_missing_seed_is_resolved_and_echoed(sim_dir):
    out = sim_dir / "sim2"
    assert main(["simulate", "--theta", str(sim_dir / "theta.csv"), "--T", "5", "--out", str(out)]) == 0
    seed = json.loads((out / "config_echo.json").read_text())["simulate"]["seed"]
    assert isinstance(seed, int)
    assert main(["simulate", "--config", str(out / "config_echo.json"), "--out", str(sim_dir / "sim3")]) == 0
    assert (out / "returns.csv").read_bytes() == (sim_dir / "sim3" / "returns.csv").read_bytes()


def test_estimate_echo_reproduces_chain(sim_dir):
    ret = str(sim_dir / "sim" / "returns.csv")
    assert main(["estimate", "--returns", ret, "--K", "1", "--iters", "15", "--n-p", "2",
                 "--particles", "10", "--seed", "5", "--out", str(sim_dir / "e1")]) == 0
    assert main(["estimate", "--config", str(sim_dir / "e1" / "config_echo.json"),
                 "--out", str(sim_dir / "e2")]) == 0
    assert (sim_dir / "e1" / "chain.csv").read_bytes() == (sim_dir / "e2" / "chain.csv").read_bytes()
    rows = _rows(sim_dir / "e1" / "chain.csv")
    assert rows[0][0] == "iteration" and rows[0][-3:] == ["avg_loglik", "log_prior", "accepted"]
    assert len(rows) == 16


def test_summarize_constant_chain_has_zero_mcse(tmp_path, capsys):
    names = make_theta(3).names()
    path = tmp_path / "chain.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + names + ["avg_loglik", "log_prior", "accepted"])
        for i in range(1, 101):
            w.writerow([i] + [repr(float(v)) for v in make_theta(3).to_vector()] + ["-10.0", "-3.0", "0"])
    assert main(["summarize", "--chain", str(path), "--out", str(tmp_path / "s")]) == 0
    table = dataio.read_summary(tmp_path / "s" / "summary.csv")
    assert set(table) == set(names)
    for name, row in table.items():
        assert row["mcse"] == 0.0
        assert row["95.credible.lower"] == row["95.credible.upper"]
        assert row["est"] == pytest.approx(row["95.credible.lower"], rel=1e-14)
    assert "beta2" in capsys.readouterr().out


def test_backtest_one_var_row_per_week(sim_dir):
    out = sim_dir / "bt"
    assert main(["backtest", "--returns", str(sim_dir / "sim" / "returns.csv"), "--theta",
                 str(sim_dir / "theta.csv"), "--K", "1", "--test-start", "2006-06-01", "--train-end",
                 "2006-05-26", "--start", "warm", "--particles", "30", "--seed", "1", "--out", str(out)]) == 0
    rows = _rows(out / "backtest.csv")
    series = dataio.ingest_returns(sim_dir / "sim" / "returns.csv").between(start="2006-06-01")
    assert len(rows) - 1 == series.T
    assert [r[1] for r in rows[1:]] == series.dates
    assert rows[0][:5] == ["week", "date", "portfolio_return", "var", "exceedance"]
    summary = (out / "summary.txt").read_text()
    assert "start: warm" in summary and "LR_cc" in summary


def test_filter_writes_trace(sim_dir):
    out = sim_dir / "f"
    assert main(["filter", "--returns", str(sim_dir / "sim" / "returns.csv"), "--theta",
                 str(sim_dir / "theta.csv"), "--K", "1", "--seed", "2", "--out", str(out)]) == 0
    rows = _rows(out / "trace.csv")
    assert rows[0] == ["t", "date", "loglik_increment", "panic_prob", "ess"] and len(rows) == 41


def test_exit_codes_and_single_line_errors(sim_dir, capsys):
    ret = str(sim_dir / "sim" / "returns.csv")
    assert main(["estimate", "--returns", ret, "--iters", "0", "--out", str(sim_dir / "x")]) == 1
    assert main(["estimate", "--returns", str(sim_dir / "missing.csv"), "--out", str(sim_dir / "x")]) == 2
    (sim_dir / "cfg.json").write_text('{"pmmh": {"iterations": 3}}')
    assert main(["summarize", "--config", str(sim_dir / "cfg.json")]) == 1
    bad = sim_dir / "bad.csv"
    bad.write_text("# units: percent\ndate,a,b,c\n2007-01-05,1e200,0,0\n2007-01-12,0,0,0\n")
    assert main(["filter", "--returns", str(bad), "--theta", str(sim_dir / "theta.csv"), "--K", "1",
                 "--seed", "1", "--out", str(sim_dir / "x")]) == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 4
    assert err[0].startswith("panicfsv estimate: configuration error")
    assert err[1].startswith("panicfsv estimate: data error")
    assert err[3].startswith("panicfsv filter: numerical error")


def test_dimension_mismatch_is_config_error(sim_dir):
    dataio.write_theta(make_theta(4), sim_dir / "theta4.csv")
    assert main(["filter", "--returns", str(sim_dir / "sim" / "returns.csv"), "--theta",
                 str(sim_dir / "theta4.csv"), "--out", str(sim_dir / "x")]) == 1
