"""Command-line entry point: ``panicfsv simulate|estimate|filter|backtest|summarize``.

Every subcommand reads an optional JSON config, lets flags override it,
resolves a missing seed to a fresh one and writes the resolved settings to
``config_echo.json`` in the output directory.  Running the same subcommand
again with ``--config <out>/config_echo.json`` reproduces its outputs.

Exit status: 0 on success, 1 for configuration problems, 2 for data
problems and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .backtest import run_backtest
from .exceptions import ConfigurationError, DataError, NumericalError, ParameterDomainError
from .model import MslParams, check_identification, simulate
from .pmmh import AdaptSchedule, pmmh_run, summarize_samples
from .rbpf import rbpf_run
from .regimes import enumerate_selectors

log = logging.getLogger("panicfsv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


def _fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2**63))


def _resolve(cfg: dataio.RunConfig, block: str, **overrides) -> dataio.RunConfig:
    """Apply non-None CLI overrides to one config block."""
    section = getattr(cfg, block)
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        cfg = replace(cfg, **{block: replace(section, **changes)})
    return cfg


def _with_data(cfg: dataio.RunConfig, **paths) -> dataio.RunConfig:
    paths = {k: str(Path(v).resolve()) if k in ("returns", "theta", "init_theta", "chain") else v
             for k, v in paths.items() if v is not None}
    return _resolve(cfg, "data", **paths)


def _seeded(cfg: dataio.RunConfig, block: str) -> dataio.RunConfig:
    if getattr(cfg, block).seed is None:
        cfg = _resolve(cfg, block, seed=_fresh_seed())
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(value, what: str):
    if value is None:
        raise ConfigurationError(f"{what} is required (flag or config)")
    return value


def _load_returns(cfg: dataio.RunConfig) -> dataio.ReturnsSeries:
    series = dataio.ingest_returns(_require(cfg.data.returns, "returns file"))
    if cfg.model.d_y is not None and cfg.model.d_y != series.d_y:
        raise DataError(f"returns have {series.d_y} assets but model.d_y is {cfg.model.d_y}")
    if series.units != cfg.model.units:
        log.info("returns declare units=%s; overriding model.units", series.units)
    return series


def _space_for(cfg: dataio.RunConfig, d_y: int):
    return enumerate_selectors(d_y, cfg.model.K)


def _theta_from_chain(path, burn_in: int) -> MslParams:
    names, samples, _, _ = dataio.read_chain(path)
    if burn_in >= len(samples):
        raise ConfigurationError(f"burn-in {burn_in} leaves no draws from a chain of {len(samples)}")
    mean = samples[burn_in:].mean(axis=0)
    return MslParams.from_dict(dict(zip(names, mean.tolist())))


def _theta_for(cfg: dataio.RunConfig) -> MslParams:
    if cfg.data.theta:
        return dataio.read_theta(cfg.data.theta)
    if cfg.data.chain:
        return _theta_from_chain(cfg.data.chain, cfg.pmmh.burn_in)
    raise ConfigurationError("parameters are required: pass --theta or --chain")


def _weekly_dates(start: str, T: int) -> list[str]:
    try:
        d0 = dt.date.fromisoformat(start)
    except ValueError as exc:
        raise ConfigurationError(f"simulate.start_date {start!r} is not an ISO date") from exc
    return [(d0 + dt.timedelta(weeks=t)).isoformat() for t in range(T)]


def cmd_simulate(args, cfg):
    cfg = _with_data(cfg, theta=args.theta)
    cfg = _resolve(cfg, "simulate", T=args.T, seed=args.seed)
    cfg = _resolve(cfg, "model", K=args.K, units=args.units)
    cfg = _seeded(cfg, "simulate")
    theta = dataio.read_theta(_require(cfg.data.theta, "parameter file"))
    check_identification(theta)
    cfg = _resolve(cfg, "model", d_y=theta.d_y, d_f=theta.d_f)
    cfg.validate()
    space = _space_for(cfg, theta.d_y)
    y, truth = simulate(theta, space, cfg.simulate.T, seed=cfg.simulate.seed)
    out = _out_dir(args.out)
    dates = _weekly_dates(cfg.simulate.start_date, cfg.simulate.T)
    assets = [f"asset{i + 1}" for i in range(theta.d_y)]
    dataio.write_returns(dataio.ReturnsSeries(dates, y, assets, cfg.model.units), out / "returns.csv")
    dataio.write_truth(truth, dates, out / "truth.csv")
    dataio.write_theta(theta, out / "theta.csv")
    dataio.write_config(cfg, out / "config_echo.json")
    print(f"wrote {cfg.simulate.T} weeks of {theta.d_y} assets to {out}")


def cmd_estimate(args, cfg):
    cfg = _with_data(cfg, returns=args.returns, init_theta=args.init, train_end=args.train_end)
    cfg = _resolve(cfg, "pmmh", iters=args.iters, n_p=args.n_p, particles=args.particles,
                   seed=args.seed, burn_in=args.burn_in, workers=args.workers)
    cfg = _resolve(cfg, "model", K=args.K)
    cfg = _seeded(cfg, "pmmh")
    series = _load_returns(cfg)
    if cfg.data.train_end:
        series = series.between(end=cfg.data.train_end)
        if series.T == 0:
            raise DataError("no returns on or before data.train_end")
    cfg = _resolve(cfg, "model", d_y=series.d_y, units=series.units)
    cfg.validate()
    space = _space_for(cfg, series.d_y)
    init = dataio.read_theta(cfg.data.init_theta) if cfg.data.init_theta else None
    if init is not None and init.d_y != series.d_y:
        raise ConfigurationError(f"initial parameters have d_y={init.d_y}, data has {series.d_y}")
    p = cfg.pmmh
    schedule = AdaptSchedule(t0=p.t0, t1=p.t1, epsilon=p.epsilon, sigma0_scale=p.sigma0_scale)
    out = _out_dir(args.out)
    dataio.write_config(cfg, out / "config_echo.json")
    chain = pmmh_run(series.values, cfg.prior, init, p.iters, p.n_p, p.particles, schedule=schedule,
                     seed=p.seed, space=space, free=p.free, workers=p.workers,
                     progress_every=p.progress_every)
    dataio.write_chain(chain, out / "chain.csv")
    burn = min(p.burn_in, len(chain) - 1)
    rows = summarize_samples(chain.samples(), chain.names, burn)
    dataio.write_summary(rows, out / "summary.csv")
    print(f"acceptance rate {chain.acceptance_rate:.3f} over {len(chain)} iterations; wrote {out}")


def cmd_filter(args, cfg):
    cfg = _with_data(cfg, returns=args.returns, theta=args.theta)
    cfg = _resolve(cfg, "filter", particles=args.particles, seed=args.seed)
    cfg = _resolve(cfg, "model", K=args.K)
    cfg = _seeded(cfg, "filter")
    series = _load_returns(cfg)
    theta = _theta_for(cfg)
    if theta.d_y != series.d_y:
        raise ConfigurationError(f"parameters have d_y={theta.d_y}, data has {series.d_y}")
    cfg = _resolve(cfg, "model", d_y=series.d_y, d_f=theta.d_f, units=series.units)
    cfg.validate()
    out = _out_dir(args.out)
    dataio.write_config(cfg, out / "config_echo.json")
    result = rbpf_run(theta, _space_for(cfg, series.d_y), series.values, cfg.filter.particles,
                      seed=cfg.filter.seed)
    dataio.write_trace(result, out / "trace.csv", series.dates)
    print(f"log-likelihood {result.loglik:.6f} over {result.T} weeks; wrote {out / 'trace.csv'}")


def cmd_backtest(args, cfg):
    cfg = _with_data(cfg, returns=args.returns, theta=args.theta, chain=args.chain,
                     train_end=args.train_end, test_start=args.test_start)
    cfg = _resolve(cfg, "backtest", alpha=args.alpha, particles=args.particles, seed=args.seed,
                   start=args.start, var_mode=args.var_mode)
    cfg = _resolve(cfg, "pmmh", burn_in=args.burn_in)
    cfg = _resolve(cfg, "model", K=args.K)
    cfg = _seeded(cfg, "backtest")
    series = _load_returns(cfg)
    theta = _theta_for(cfg)
    if theta.d_y != series.d_y:
        raise ConfigurationError(f"parameters have d_y={theta.d_y}, data has {series.d_y}")
    cfg = _resolve(cfg, "model", d_y=series.d_y, d_f=theta.d_f, units=series.units)
    cfg.validate()
    d = cfg.data
    test = series.between(start=d.test_start) if d.test_start else series
    if test.T == 0:
        raise DataError("no out-of-sample returns on or after data.test_start")
    train = None
    if cfg.backtest.start == "warm":
        if not d.train_end:
            raise ConfigurationError("a warm start needs data.train_end")
        train = series.between(end=d.train_end).values
    out = _out_dir(args.out)
    dataio.write_config(cfg, out / "config_echo.json")
    b = cfg.backtest
    report = run_backtest(theta, _space_for(cfg, series.d_y), test.values, n_particles=b.particles,
                          alpha=b.alpha, seed=b.seed, train_returns=train, units=series.units,
                          var_mode=b.var_mode)
    dataio.write_backtest(report, out, test.dates, {"seed": b.seed, "var_mode": b.var_mode})
    print(f"{report.exceedance_count} exceedances in {report.T} weeks at alpha={b.alpha}; wrote {out}")


def cmd_summarize(args, cfg):
    cfg = _with_data(cfg, chain=args.chain)
    cfg = _resolve(cfg, "pmmh", burn_in=args.burn_in)
    cfg.validate()
    names, samples, _, _ = dataio.read_chain(_require(cfg.data.chain, "chain file"))
    if cfg.pmmh.burn_in >= len(samples):
        raise ConfigurationError(f"burn-in {cfg.pmmh.burn_in} leaves no draws from a chain of {len(samples)}")
    rows = summarize_samples(samples, names, cfg.pmmh.burn_in)
    out = _out_dir(args.out)
    dataio.write_config(cfg, out / "config_echo.json")
    dataio.write_summary(rows, out / "summary.csv")
    sys.stdout.write(dataio.format_summary(rows))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panicfsv", description="Panic-regime factor stochastic volatility toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
        p.add_argument("--K", type=int, help="maximum number of assets in a contained panic")

    p = sub.add_parser("simulate", help="simulate returns and latent paths from a parameter file")
    common(p, "sim_out")
    p.add_argument("--theta", help="parameter CSV (name,value)")
    p.add_argument("--T", type=int, help="number of weeks")
    p.add_argument("--seed", type=int)
    p.add_argument("--units", choices=dataio.UNITS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run PMMH on a returns file")
    common(p, "estimate_out")
    p.add_argument("--returns")
    p.add_argument("--init", help="initial parameter CSV")
    p.add_argument("--train-end", help="last training date (inclusive)")
    p.add_argument("--iters", type=int)
    p.add_argument("--n-p", type=int, dest="n_p", help="filter replicas averaged per iteration")
    p.add_argument("--particles", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("filter", help="run one particle filter and write per-week traces")
    common(p, "filter_out")
    p.add_argument("--returns")
    p.add_argument("--theta")
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_filter, chain=None)

    p = sub.add_parser("backtest", help="forecast covariances and score VaR out of sample")
    common(p, "backtest_out")
    p.add_argument("--returns")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--theta", help="parameter CSV")
    src.add_argument("--chain", help="chain CSV; the post-burn-in posterior mean is used")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--train-end")
    p.add_argument("--test-start")
    p.add_argument("--alpha", type=float)
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--start", choices=("fresh", "warm"))
    p.add_argument("--var-mode", dest="var_mode", choices=("gaussian", "mixture"))
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("summarize", help="posterior summary table from a chain file")
    p.add_argument("--config")
    p.add_argument("--out", default="summary_out")
    p.add_argument("--chain")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = dataio.load_config(args.config) if args.config else dataio.RunConfig()
        args.func(args, cfg)
    except (ConfigurationError, ParameterDomainError) as exc:
        return _fail(args.command, "configuration", exc, EXIT_CONFIG)
    except DataError as exc:
        return _fail(args.command, "data", exc, EXIT_DATA)
    except NumericalError as exc:
        return _fail(args.command, "numerical", exc, EXIT_NUMERICAL)
    return EXIT_OK


def _fail(command, kind, exc, code) -> int:
    msg = " ".join(str(exc).split())
    print(f"panicfsv {command}: {kind} error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
