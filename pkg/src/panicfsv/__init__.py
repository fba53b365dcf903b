"""Markov-switching panic-regime factor stochastic volatility.

Simulation, Rao-Blackwellized particle filtering, particle marginal
Metropolis-Hastings estimation, covariance forecasting with VaR
backtesting, and brute-force oracles for small instances.
"""
from .backtest import (
    BacktestReport,
    coverage_tests,
    forecast_cov,
    min_variance_weights,
    run_backtest,
    var_quantile,
)
from .dataio import ReturnsSeries, RunConfig, ingest_returns
from .exceptions import (
    ConfigurationError,
    DataError,
    FilterDegeneracyError,
    NumericalError,
    PanicFSVError,
    ParameterDomainError,
)
from .hmm import RegimeBelief, hmm_init, hmm_pass, hmm_step
from .model import MslParams, PriorSpec, log_prior, simulate
from .oracles import GridSpec, exact_hmm_likelihood, grid_likelihood, grid_posterior_1d
from .pmmh import AdaptSchedule, Chain, pmmh_run, summarize_chain
from .rbpf import FilterOutput, ParticleCloud, rbpf_loglik, rbpf_run, sisr_run
from .regimes import RegimeTransition, SelectorSpace, enumerate_selectors, selector_matrix

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
