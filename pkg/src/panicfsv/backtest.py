"""Out-of-sample forecasting, minimum-variance portfolios and VaR backtests.

The forecast for week ``t`` is always formed before week ``t``'s return is
seen: from the filter cloud at ``t - 1``, or from the stationary law of the
model for the first week of a fresh-start run.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy
from scipy.stats import chi2, norm

from .exceptions import ConfigurationError, FilterDegeneracyError, NumericalError
from .model import MslParams
from .rbpf import ParticleCloud, rbpf_run
from .regimes import SelectorSpace

__all__ = [
    "ForecastMoments",
    "BacktestReport",
    "forecast_cov",
    "stationary_forecast_cov",
    "min_variance_weights",
    "var_quantile",
    "mixture_var_quantile",
    "coverage_tests",
    "run_backtest",
]


@dataclass
class ForecastMoments:
    """One-step predictive mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray


def _panic_second_moment(space: SelectorSpace, regime_probs: np.ndarray) -> np.ndarray:
    """``sum_j pi[..., j] m_j m_j^T`` for selector masks ``m_j``."""
    m = space.masks
    return np.einsum("...j,ja,jb->...ab", regime_probs, m, m)


def forecast_cov(cloud: ParticleCloud, theta: MslParams, space: SelectorSpace) -> np.ndarray:
    """Predictive covariance of next week's returns from a weighted cloud.

    Each particle contributes the expected conditional covariance one step
    ahead: log-normal expectations of the factor variances times the outer
    product of the loadings, with the panic term averaged over the
    predicted regime probabilities.
    """
    d_f = theta.d_f
    trans = theta.transition(space.S_K)
    x = cloud.logvols
    ahead = theta.mu + theta.phi * (x - theta.mu) + theta.q / 2  # (n, 2 d_f)
    scale = np.exp(ahead)
    w = cloud.weights
    outer = np.einsum("ak,bk->kab", theta.B, theta.B)  # (d_f, d_y, d_y)
    market = np.einsum("i,ik,kab->ab", w, scale[:, :d_f], outer)
    pi_pred = trans.predict(cloud.beliefs)
    sel = _panic_second_moment(space, pi_pred)  # (n, d_y, d_y)
    panic = np.einsum("i,ik,kab,iab->ab", w, scale[:, d_f:], outer, sel)
    cov = market + panic + np.diag(theta.R)
    return 0.5 * (cov + cov.T)


def stationary_forecast_cov(theta: MslParams, space: SelectorSpace) -> np.ndarray:
    """Predictive covariance before any data: stationary log-vols and
    uniform regimes."""
    d_f = theta.d_f
    scale = np.exp(theta.mu + theta.stationary_var / 2)
    outer = np.einsum("ak,bk->kab", theta.B, theta.B)
    sel = _panic_second_moment(space, np.full(space.S_K, 1.0 / space.S_K))
    cov = np.einsum("k,kab->ab", scale[:d_f], outer) + np.einsum("k,kab->ab", scale[d_f:], outer) * sel
    return cov + np.diag(theta.R)


def min_variance_weights(cov) -> np.ndarray:
    """Fully invested minimum-variance weights; shorting is allowed."""
    cov = np.asarray(cov, dtype=float)
    ones = np.ones(cov.shape[0])
    try:
        x = np.linalg.solve(cov, ones)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("forecast covariance is singular") from exc
    return x / x.sum()


def var_quantile(mean, cov, w, alpha: float) -> float:
    """Gaussian lower ``alpha`` quantile of the portfolio return ``w'y``."""
    if not 0.0 < alpha <= 0.5:
        raise ConfigurationError(f"alpha must lie in (0, 0.5], got {alpha}")
    w = np.asarray(w, dtype=float)
    z = norm.ppf(1.0 - alpha)
    return float(w @ np.asarray(mean) - z * np.sqrt(w @ np.asarray(cov) @ w))


def mixture_var_quantile(cloud: ParticleCloud, theta: MslParams, space: SelectorSpace, w, alpha: float,
                         n_draws: int = 20000, seed=None) -> float:
    """Lower ``alpha`` quantile of ``w'y`` simulated from the particle mixture.

    Not used by :func:`run_backtest` unless ``var_mode="mixture"``.
    """
    rng = np.random.default_rng(seed)
    d_f = theta.d_f
    idx = rng.choice(cloud.n, size=n_draws, p=cloud.weights / cloud.weights.sum())
    x = cloud.logvols[idx]
    x = theta.mu + theta.phi * (x - theta.mu) + np.sqrt(theta.q) * rng.standard_normal(x.shape)
    probs = theta.transition(space.S_K).predict(cloud.beliefs[idx])
    cdf = np.cumsum(probs, axis=1)
    regimes = (rng.random((n_draws, 1)) > cdf).sum(axis=1).clip(max=space.S_K - 1)
    wb = np.asarray(w) @ theta.B  # (d_f,)
    wmb = (np.asarray(w) * space.masks[regimes]) @ theta.B  # (n_draws, d_f)
    var = np.exp(x[:, :d_f]) @ wb**2 + (np.exp(x[:, d_f:]) * wmb**2).sum(axis=1) + np.asarray(w) ** 2 @ theta.R
    r = np.asarray(w) @ theta.mean + np.sqrt(var) * rng.standard_normal(n_draws)
    return float(np.quantile(r, alpha))


def coverage_tests(flags, alpha: float) -> dict:
    """Unconditional (Kupiec) and conditional (Christoffersen) coverage tests.

    Returns a dict with ``LR_uc``, ``p_uc`` (chi-square, 1 df) and
    ``LR_cc``, ``p_cc`` (chi-square, 2 df) plus the counts used.
    ``0 log 0`` is taken as zero.
    """
    flags = np.asarray(flags).astype(int)
    T = len(flags)
    if T < 2:
        raise ConfigurationError("coverage tests need at least two observations")
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    x = int(flags.sum())
    if x in (0, T):
        warnings.warn(f"degenerate exceedance sequence ({x} of {T}); using 0*log(0)=0", RuntimeWarning)
    pi_hat = x / T
    ll_null = xlogy(x, alpha) + xlogy(T - x, 1 - alpha)
    ll_alt = xlogy(x, pi_hat) + xlogy(T - x, 1 - pi_hat)
    lr_uc = max(-2.0 * (ll_null - ll_alt), 0.0)

    prev, nxt = flags[:-1], flags[1:]
    n00 = int(np.sum((prev == 0) & (nxt == 0)))
    n01 = int(np.sum((prev == 0) & (nxt == 1)))
    n10 = int(np.sum((prev == 1) & (nxt == 0)))
    n11 = int(np.sum((prev == 1) & (nxt == 1)))
    pi01 = n01 / (n00 + n01) if n00 + n01 else 0.0
    pi11 = n11 / (n10 + n11) if n10 + n11 else 0.0
    pi1 = (n01 + n11) / (T - 1)
    ll_markov = xlogy(n00, 1 - pi01) + xlogy(n01, pi01) + xlogy(n10, 1 - pi11) + xlogy(n11, pi11)
    ll_indep = xlogy(n00 + n10, 1 - pi1) + xlogy(n01 + n11, pi1)
    lr_ind = max(-2.0 * (ll_indep - ll_markov), 0.0)
    lr_cc = lr_uc + lr_ind
    return {
        "T": T,
        "exceedances": x,
        "LR_uc": float(lr_uc),
        "p_uc": float(chi2.sf(lr_uc, 1)),
        "LR_ind": float(lr_ind),
        "p_ind": float(chi2.sf(lr_ind, 1)),
        "LR_cc": float(lr_cc),
        "p_cc": float(chi2.sf(lr_cc, 2)),
        "transitions": (n00, n01, n10, n11),
    }


@dataclass
class BacktestReport:
    """Weekly series and summary statistics of one backtest.

    ``weights[t]`` is chosen from information up to week ``t - 1`` and
    earns ``portfolio_returns[t]``.  Wealth curves start at 1 and include
    week ``t``'s return at index ``t``.
    """

    alpha: float
    start: str
    units: str
    mean: np.ndarray
    covs: np.ndarray
    weights: np.ndarray
    portfolio_returns: np.ndarray
    equal_weight_returns: np.ndarray
    var: np.ndarray
    exceedances: np.ndarray
    panic_prob: np.ndarray
    loglik_increments: np.ndarray
    wealth: np.ndarray
    wealth_equal: np.ndarray
    tests: dict | None = field(default=None)

    @property
    def T(self) -> int:
        return len(self.var)

    @property
    def exceedance_count(self) -> int:
        return int(self.exceedances.sum())


def _to_decimal(r, units):
    return r / 100.0 if units == "percent" else r


def run_backtest(theta: MslParams, space: SelectorSpace, oos_returns, n_particles: int = 100,
                 alpha: float = 0.05, seed=None, train_returns=None, units: str = "percent",
                 var_mode: str = "gaussian") -> BacktestReport:
    """Filter through the out-of-sample returns and score the forecasts.

    Parameters
    ----------
    train_returns : optional array
        If given the filter is warm-started by running through these
        returns first; otherwise it starts fresh at the first
        out-of-sample week, whose forecast comes from the stationary law.
    units : {"percent", "decimal"}
        Unit of the returns, used to compound wealth.
    var_mode : {"gaussian", "mixture"}
        ``"gaussian"`` uses the forecast mean and covariance;
        ``"mixture"`` simulates the particle predictive instead.
    """
    if units not in ("percent", "decimal"):
        raise ConfigurationError(f"units must be 'percent' or 'decimal', got {units!r}")
    if var_mode not in ("gaussian", "mixture"):
        raise ConfigurationError(f"unknown var_mode {var_mode!r}")
    oos = np.asarray(oos_returns, dtype=float).reshape(-1, theta.d_y)
    T = oos.shape[0]
    d_y = theta.d_y
    start = "warm" if train_returns is not None and len(train_returns) else "fresh"
    mean = theta.mean
    if T == 0:
        empty = np.zeros(0)
        return BacktestReport(alpha, start, units, mean, np.zeros((0, d_y, d_y)), np.zeros((0, d_y)),
                              empty, empty, empty, np.zeros(0, dtype=bool), empty, empty, empty, empty, None)

    if start == "warm":
        train = np.asarray(train_returns, dtype=float).reshape(-1, d_y)
        data = np.vstack([train, oos])
        offset = len(train)
    else:
        data, offset = oos, 0

    var_rng = np.random.default_rng(np.random.SeedSequence(0 if seed is None else seed, spawn_key=(7,)))
    covs = np.empty((T + 1, d_y, d_y))
    mixture_q = np.full(T + 1, np.nan)

    def capture(t, cloud):
        k = t - offset + 1  # forecast for OOS week k
        if 0 <= k <= T:
            covs[k] = forecast_cov(cloud, theta, space)
            if var_mode == "mixture" and k < T:
                w = min_variance_weights(covs[k])
                mixture_q[k] = mixture_var_quantile(cloud, theta, space, w, alpha, seed=var_rng)
        return None

    try:
        out = rbpf_run(theta, space, data, n_particles, seed, hooks={"forecast": capture})
    except FilterDegeneracyError as exc:
        week = exc.step - offset
        where = f"out-of-sample week {week}" if week >= 1 else f"training step {exc.step}"
        raise FilterDegeneracyError(week, f"filter degenerated at {where}") from exc
    if start == "fresh":
        covs[0] = stationary_forecast_cov(theta, space)

    weights = np.empty((T, d_y))
    var = np.empty(T)
    for k in range(T):
        try:
            np.linalg.cholesky(covs[k])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"forecast covariance for week {k + 1} is not positive definite") from exc
        weights[k] = min_variance_weights(covs[k])
        if var_mode == "mixture" and np.isfinite(mixture_q[k]):
            var[k] = mixture_q[k]
        else:
            # fresh-start first week has no cloud to simulate from
            var[k] = var_quantile(mean, covs[k], weights[k], alpha)
    port = np.einsum("ta,ta->t", weights, oos)
    eq = oos.mean(axis=1)
    exceed = port < var
    wealth = np.cumprod(1.0 + _to_decimal(port, units))
    wealth_eq = np.cumprod(1.0 + _to_decimal(eq, units))
    tests = None
    if T >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tests = coverage_tests(exceed, alpha)
    return BacktestReport(
        alpha=alpha,
        start=start,
        units=units,
        mean=mean,
        covs=covs[:T],
        weights=weights,
        portfolio_returns=port,
        equal_weight_returns=eq,
        var=var,
        exceedances=exceed,
        panic_prob=out.panic_prob[offset:],
        loglik_increments=out.loglik_increments[offset:],
        wealth=wealth,
        wealth_equal=wealth_eq,
        tests=tests,
    )
