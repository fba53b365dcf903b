import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panicfsv import dataio
from panicfsv.exceptions import ConfigurationError, DataError
from panicfsv.pmmh import SummaryRow


def _write(tmp_path, text, name="r.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


GOOD = "# units: percent\ndate,XLE,XLF\n2007-11-30,1.5,-0.25\n2007-12-07,0.0,2\n"


def test_two_row_file(tmp_path):
    s = dataio.ingest_returns(_write(tmp_path, GOOD))
    assert (s.T, s.d_y, s.units) == (2, 2, "percent")
    assert s.assets == ["XLE", "XLF"]
    np.testing.assert_array_equal(s.values, [[1.5, -0.25], [0.0, 2.0]])


@pytest.mark.parametrize("body,needle", [
    ("date,a,b\n2007-11-30,1,,\n", "line 3"),
    ("date,a,b\n2007-11-30,1,\n", "line 3 column 'b' is empty"),
    ("date,a,b\n2007-11-30,1,x\n", "not a number"),
    ("date,a,b\n2007-11-30,1,nan\n", "not finite"),
    ("date,a,b\n2007-11-30,1,2\n2007-11-30,1,2\n", "line 4 duplicates"),
    ("date,a,b\n2007-12-07,1,2\n2007-11-30,1,2\n", "line 4 date 2007-11-30 is earlier"),
    ("date,a,b\nsoon,1,2\n", "unparseable date"),
    ("week,a,b\n1,1,2\n", "header"),
    ("date,a,b\n", "no data rows"),
])
def test_malformed_files_name_the_line(tmp_path, body, needle):
    with pytest.raises(DataError, match=needle):
        dataio.ingest_returns(_write(tmp_path, "# units: decimal\n" + body))


def test_units_line_is_mandatory(tmp_path):
    with pytest.raises(DataError, match="units"):
        dataio.ingest_returns(_write(tmp_path, "date,a\n2007-01-05,1\n"))
    with pytest.raises(DataError, match="units"):
        dataio.ingest_returns(_write(tmp_path, "# units: basis-points\ndate,a\n2007-01-05,1\n"))


def test_integer_dates_accepted(tmp_path):
    s = dataio.ingest_returns(_write(tmp_path, "# units: decimal\ndate,a\n1,0.1\n2,0.2\n10,0.3\n"))
    assert s.T == 3
    assert s.between(start="2").dates == ["2", "10"]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 20), d=st.integers(1, 5))
def test_round_trip_is_exact(tmp_path_factory, seed, T, d):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((T, d)) * 10.0 ** rng.integers(-8, 8, (T, d))
    dates = [f"{2000 + t // 50}-{1 + (t // 4) % 12:02d}-{1 + 7 * (t % 4):02d}" for t in range(T)]
    s = dataio.ReturnsSeries(dates, vals, [f"a{k}" for k in range(d)], "decimal")
    path = tmp_path_factory.mktemp("rt") / "r.csv"
    dataio.write_returns(s, path)
    back = dataio.ingest_returns(path)
    np.testing.assert_array_equal(back.values, vals)
    assert back.dates == dates and back.units == "decimal"


def test_split_by_dates(tmp_path):
    s = dataio.ingest_returns(_write(tmp_path, GOOD))
    assert s.between(end="2007-11-30").T == 1
    assert s.between(start="2007-12-01").dates == ["2007-12-07"]


def test_theta_round_trip(tmp_path, theta3):
    dataio.write_theta(theta3, tmp_path / "t.csv")
    back = dataio.read_theta(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.to_vector(), theta3.to_vector())


def test_theta_file_missing_entry(tmp_path):
    _write(tmp_path, "name,value\nR1,1.0\nlambda1,0.001\n", "t.csv")
    with pytest.raises(ConfigurationError, match="missing"):
        dataio.read_theta(tmp_path / "t.csv")


def test_summary_round_trip(tmp_path):
    rows = [SummaryRow("beta2", 0.87824, 0.00623, 0.59667, 1.17427), SummaryRow("p", 0.5, 0.0, 0.5, 0.5)]
    dataio.write_summary(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "param,est,mcse,95.credible.lower,95.credible.upper"
    back = dataio.read_summary(tmp_path / "s.csv")
    assert back["beta2"]["95.credible.upper"] == 1.17427


def test_config_defaults_and_unknown_keys(tmp_path):
    cfg = dataio.config_from_dict({"pmmh": {"iters": 10}, "backtest": {"alpha": 0.01}})
    assert cfg.pmmh.iters == 10 and cfg.pmmh.t0 == 150 and cfg.backtest.alpha == 0.01
    with pytest.raises(ConfigurationError, match="unknown keys"):
        dataio.config_from_dict({"pmmh": {"iterations": 10}})
    with pytest.raises(ConfigurationError, match="unknown config sections"):
        dataio.config_from_dict({"plots": {}})
    with pytest.raises(ConfigurationError):
        dataio.config_from_dict({"pmmh": {"t0": 2000, "t1": 1000}})
    with pytest.raises(ConfigurationError):
        dataio.config_from_dict({"data": {"train_end": "2008-01-01", "test_start": "2007-01-01"}})
    with pytest.raises(ConfigurationError):
        dataio.config_from_dict({"prior": {"phi_low": 0.9, "phi_high": 0.4}})


def test_config_round_trip(tmp_path):
    cfg = dataio.config_from_dict({"model": {"K": 1}, "prior": {"loading_var": 0.5}, "pmmh": {"seed": 3}})
    dataio.write_config(cfg, tmp_path / "c.json")
    assert dataio.load_config(tmp_path / "c.json") == cfg
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        dataio.load_config(tmp_path / "bad.json")
