"""Returns ingestion, run configuration and CSV artifacts.

Every tabular artifact is a plain CSV and floats are written with ``repr``
so a write/read round trip is exact.  Returns files carry a mandatory
``# units: percent|decimal`` line ahead of the header row.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DataError
from .model import MslParams, PriorSpec

__all__ = [
    "ReturnsSeries",
    "ingest_returns",
    "write_returns",
    "read_theta",
    "write_theta",
    "write_truth",
    "write_chain",
    "read_chain",
    "write_summary",
    "read_summary",
    "write_trace",
    "write_backtest",
    "RunConfig",
    "load_config",
    "write_config",
]

UNITS = ("percent", "decimal")


def _fmt(x) -> str:
    return repr(float(x))


def _date_key(text: str):
    try:
        return (0, dt.date.fromisoformat(text).toordinal())
    except ValueError:
        pass
    try:
        return (0, int(text))
    except ValueError:
        return None


@dataclass
class ReturnsSeries:
    """Weekly returns with their dates and asset names."""

    dates: list
    values: np.ndarray
    assets: list
    units: str = "percent"

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d_y(self) -> int:
        return self.values.shape[1]

    def between(self, start: str | None = None, end: str | None = None) -> "ReturnsSeries":
        """Rows with ``start <= date <= end`` (either bound optional)."""
        keys = [_date_key(d) for d in self.dates]
        lo = _date_key(start) if start else None
        hi = _date_key(end) if end else None
        if (start and lo is None) or (end and hi is None):
            raise ConfigurationError(f"cannot parse split date {start or end!r}")
        keep = [i for i, k in enumerate(keys) if (lo is None or k >= lo) and (hi is None or k <= hi)]
        return ReturnsSeries([self.dates[i] for i in keep], self.values[keep], list(self.assets), self.units)


def ingest_returns(path) -> ReturnsSeries:
    """Read and validate a returns CSV.

    Raises :class:`DataError` naming the offending line for missing cells,
    non-numeric or non-finite values, ragged rows, and dates that repeat or
    go backwards.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read returns file {path}: {exc}") from exc
    lines = text.splitlines()
    units = None
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        key, _, val = lines[start][1:].partition(":")
        if key.strip().lower() == "units":
            units = val.strip().lower()
        start += 1
    if units is None:
        raise DataError(f"{path}: missing '# units: percent|decimal' header line")
    if units not in UNITS:
        raise DataError(f"{path}: units must be one of {UNITS}, got {units!r}")
    rows = list(csv.reader(lines[start:]))
    if not rows:
        raise DataError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise DataError(f"{path}: header must be 'date,<asset>,...'")
    assets = header[1:]
    dates, values, keys = [], [], []
    for offset, row in enumerate(rows[1:]):
        line = start + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        date = row[0].strip()
        key = _date_key(date)
        if key is None:
            raise DataError(f"{path}: line {line} has unparseable date {date!r}")
        vals = []
        for col, cell in zip(assets, row[1:]):
            cell = cell.strip()
            if not cell:
                raise DataError(f"{path}: line {line} column {col!r} is empty")
            try:
                v = float(cell)
            except ValueError as exc:
                raise DataError(f"{path}: line {line} column {col!r} is not a number: {cell!r}") from exc
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line} column {col!r} is not finite")
            vals.append(v)
        if keys and key == keys[-1]:
            raise DataError(f"{path}: line {line} duplicates date {date}")
        if keys and key < keys[-1]:
            raise DataError(f"{path}: line {line} date {date} is earlier than the previous row")
        dates.append(date)
        keys.append(key)
        values.append(vals)
    if not values:
        raise DataError(f"{path}: no data rows")
    return ReturnsSeries(dates, np.array(values), assets, units)


def write_returns(series: ReturnsSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# units: {series.units}\n")
        w = csv.writer(fh)
        w.writerow(["date"] + list(series.assets))
        for d, row in zip(series.dates, series.values):
            w.writerow([d] + [_fmt(v) for v in row])


def read_theta(path) -> MslParams:
    """Parameters from a ``name,value`` CSV with table row names."""
    values = {}
    try:
        with open(path, newline="") as fh:
            for i, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].startswith("#") or row[0] == "name":
                    continue
                if len(row) != 2:
                    raise ConfigurationError(f"{path}: line {i} should be 'name,value'")
                values[row[0].strip()] = float(row[1])
    except OSError as exc:
        raise ConfigurationError(f"cannot read parameter file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return MslParams.from_dict(values)


def write_theta(theta: MslParams, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value"])
        for k, v in theta.as_dict().items():
            w.writerow([k, _fmt(v)])


def write_truth(truth, dates, path) -> None:
    d = truth.logvol.shape[1] // 2
    cols = (["date", "regime"] + [f"x2_{k + 1}" for k in range(d)] + [f"x3_{k + 1}" for k in range(d)]
            + [f"f1_{k + 1}" for k in range(d)] + [f"f2_{k + 1}" for k in range(d)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t, date in enumerate(dates):
            w.writerow([date, int(truth.regimes[t])] + [_fmt(v) for v in truth.logvol[t]]
                       + [_fmt(v) for v in truth.factors[t]])


def write_chain(chain, path) -> None:
    """One row per iteration: natural-scale parameters, averaged
    log-likelihood, log prior and acceptance flag."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + list(chain.names) + ["avg_loglik", "log_prior", "accepted"])
        for i, s in enumerate(chain.states, start=1):
            w.writerow([i] + [_fmt(v) for v in s.theta.to_vector()]
                       + [_fmt(s.avg_loglik), _fmt(s.log_prior), int(s.accepted)])


def read_chain(path):
    """Return ``(names, samples, avg_loglik, accepted)`` from a chain CSV."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read chain file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty chain file")
    header = rows[0]
    if header[:1] != ["iteration"] or header[-3:] != ["avg_loglik", "log_prior", "accepted"]:
        raise DataError(f"{path}: not a chain file")
    names = header[1:-3]
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise DataError(f"{path}: chain has no iterations")
    return names, data[:, 1:-3], data[:, -3], data[:, -1].astype(bool)


SUMMARY_HEADER = ["param", "est", "mcse", "95.credible.lower", "95.credible.upper"]


def write_summary(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r.name, _fmt(r.est), _fmt(r.mcse), _fmt(r.lower), _fmt(r.upper)])


def read_summary(path) -> dict[str, dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != SUMMARY_HEADER:
        raise DataError(f"{path}: unexpected summary header {rows[0]}")
    return {r[0]: dict(zip(SUMMARY_HEADER[1:], map(float, r[1:]))) for r in rows[1:] if r}


def format_summary(rows) -> str:
    """Fixed-width text rendering of a summary table."""
    out = [f"{'':>10} {'est':>12} {'mcse':>10} {'95.lower':>12} {'95.upper':>12}"]
    for r in rows:
        out.append(f"{r.name:>10} {r.est:12.5f} {r.mcse:10.5f} {r.lower:12.5f} {r.upper:12.5f}")
    return "\n".join(out) + "\n"


TRACE_HEADER = ["t", "date", "loglik_increment", "panic_prob", "ess"]


def write_trace(output, path, dates=None) -> None:
    dates = dates if dates is not None else [str(t + 1) for t in range(output.T)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for t in range(output.T):
            w.writerow([t + 1, dates[t], _fmt(output.loglik_increments[t]),
                        _fmt(output.panic_prob[t]), _fmt(output.ess[t])])


def backtest_header(d_y: int) -> list[str]:
    return (["week", "date", "portfolio_return", "var", "exceedance", "panic_prob", "loglik_increment",
             "wealth", "wealth_equal", "equal_weight_return"] + [f"w{k + 1}" for k in range(d_y)])


def write_backtest(report, out_dir, dates=None, extra_header: dict | None = None) -> tuple[Path, Path]:
    """Write ``backtest.csv`` (one row per week) and ``summary.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d_y = report.mean.shape[0]
    dates = dates if dates is not None else [str(t + 1) for t in range(report.T)]
    table = out_dir / "backtest.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(backtest_header(d_y))
        for t in range(report.T):
            w.writerow([t + 1, dates[t], _fmt(report.portfolio_returns[t]), _fmt(report.var[t]),
                        int(report.exceedances[t]), _fmt(report.panic_prob[t]),
                        _fmt(report.loglik_increments[t]), _fmt(report.wealth[t]),
                        _fmt(report.wealth_equal[t]), _fmt(report.equal_weight_returns[t])]
                       + [_fmt(v) for v in report.weights[t]])
    summary = out_dir / "summary.txt"
    lines = [f"start: {report.start}", f"units: {report.units}", f"alpha: {report.alpha}",
             f"weeks: {report.T}", f"exceedances: {report.exceedance_count}"]
    for k, v in (extra_header or {}).items():
        lines.append(f"{k}: {v}")
    if report.T:
        lines.append(f"exceedance_rate: {report.exceedance_count / report.T:.6f}")
        lines.append(f"terminal_wealth: {report.wealth[-1]:.6f}")
        lines.append(f"terminal_wealth_equal: {report.wealth_equal[-1]:.6f}")
    if report.tests:
        for key in ("LR_uc", "p_uc", "LR_ind", "p_ind", "LR_cc", "p_cc"):
            lines.append(f"{key}: {report.tests[key]:.6f}")
    summary.write_text("\n".join(lines) + "\n")
    return table, summary


@dataclass
class ModelConfig:
    d_y: int | None = None
    d_f: int = 1
    K: int = 2
    units: str = "percent"


@dataclass
class SimulateConfig:
    T: int = 200
    seed: int | None = None
    start_date: str = "2005-12-30"


@dataclass
class PmmhConfig:
    iters: int = 1000
    n_p: int = 4
    particles: int = 50
    t0: int = 150
    t1: int = 1000
    epsilon: float = 1e-8
    sigma0_scale: float = 0.01
    seed: int | None = None
    burn_in: int = 0
    workers: int = 1
    free: list | None = None
    progress_every: int = 100


@dataclass
class FilterConfig:
    particles: int = 100
    seed: int | None = None


@dataclass
class BacktestConfig:
    alpha: float = 0.05
    particles: int = 100
    seed: int | None = None
    start: str = "fresh"
    var_mode: str = "gaussian"


@dataclass
class DataConfig:
    returns: str | None = None
    theta: str | None = None
    init_theta: str | None = None
    chain: str | None = None
    train_end: str | None = None
    test_start: str | None = None


@dataclass
class RunConfig:
    """Everything a CLI run depends on; echoed next to every output."""

    model: ModelConfig = field(default_factory=ModelConfig)
    prior: PriorSpec = field(default_factory=PriorSpec)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    pmmh: PmmhConfig = field(default_factory=PmmhConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        if self.model.units not in UNITS:
            raise ConfigurationError(f"model.units must be one of {UNITS}")
        if self.model.d_y is not None and self.model.d_y < 1:
            raise ConfigurationError("model.d_y must be positive")
        if self.pmmh.burn_in < 0:
            raise ConfigurationError("pmmh.burn_in must be non-negative")
        if self.model.d_f < 1 or self.model.K < 0:
            raise ConfigurationError("model.d_f must be >= 1 and model.K >= 0")
        if self.simulate.T < 1:
            raise ConfigurationError("simulate.T must be >= 1")
        p = self.pmmh
        if p.iters < 1 or p.particles < 1 or p.n_p < 1 or p.workers < 1:
            raise ConfigurationError("pmmh iters, n_p, particles and workers must be positive")
        if not 0 < p.t0 < p.t1:
            raise ConfigurationError("need 0 < pmmh.t0 < pmmh.t1")
        if self.filter.particles < 1 or self.backtest.particles < 1:
            raise ConfigurationError("particle counts must be positive")
        if not 0 < self.backtest.alpha <= 0.5:
            raise ConfigurationError("backtest.alpha must lie in (0, 0.5]")
        if self.backtest.start not in ("fresh", "warm"):
            raise ConfigurationError("backtest.start must be 'fresh' or 'warm'")
        if self.backtest.var_mode not in ("gaussian", "mixture"):
            raise ConfigurationError("backtest.var_mode must be 'gaussian' or 'mixture'")
        d = self.data
        if d.train_end and d.test_start:
            a, b = _date_key(d.train_end), _date_key(d.test_start)
            if a is None or b is None or not a < b:
                raise ConfigurationError("data.train_end must precede data.test_start")

    def to_dict(self) -> dict:
        return asdict(self)


_BLOCKS = {
    "model": ModelConfig,
    "prior": PriorSpec,
    "simulate": SimulateConfig,
    "pmmh": PmmhConfig,
    "filter": FilterConfig,
    "backtest": BacktestConfig,
    "data": DataConfig,
}


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(raw) - set(_BLOCKS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    blocks = {}
    for name, cls in _BLOCKS.items():
        section = raw.get(name, {}) or {}
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigurationError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            blocks[name] = cls(**section)
        except TypeError as exc:
            raise ConfigurationError(f"[{name}]: {exc}") from exc
    cfg = RunConfig(**blocks)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
