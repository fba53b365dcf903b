"""Brute-force likelihood and posterior oracles.

Nothing here reuses the filtering code: covariances are assembled from
explicit matrix products, the regime kernel is a dense matrix, and the
log-vol integral is a plain tensor-grid trapezoid rule.  The point is to be
obviously correct on tiny problems, not fast.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import ConfigurationError, NumericalError
from .model import MslParams
from .regimes import SelectorSpace

__all__ = [
    "GridSpec",
    "GridPosterior",
    "dense_obs_logpdf",
    "exact_hmm_likelihood",
    "enumerate_hmm_likelihood",
    "grid_likelihood",
    "grid_posterior_1d",
]


def _dense_kernel(p: float, S: int) -> np.ndarray:
    if S == 1:
        return np.ones((1, 1))
    return p * np.eye(S) + (1.0 - p) / (S - 1) * (np.ones((S, S)) - np.eye(S))


def dense_obs_logpdf(theta: MslParams, space: SelectorSpace, logvols: np.ndarray, y) -> np.ndarray:
    """``log N(y; B lam, Sigma)`` for every row of ``logvols`` and every regime.

    ``Sigma = B diag(e^x2) B' + D B diag(e^x3) B' D + R`` is built literally.
    Returns an array of shape ``(len(logvols), S_K)``.
    """
    logvols = np.atleast_2d(np.asarray(logvols, dtype=float))
    d_f, d_y = theta.d_f, theta.d_y
    B = theta.B
    out = np.empty((logvols.shape[0], space.S_K))
    mean = B @ theta.lam
    resid = np.asarray(y, dtype=float) - mean
    Rm = np.diag(theta.R)
    E2 = np.exp(logvols[:, :d_f])
    E3 = np.exp(logvols[:, d_f:])
    market = np.einsum("ak,nk,bk->nab", B, E2, B)
    panic = np.einsum("ak,nk,bk->nab", B, E3, B)
    for s in range(space.S_K):
        D = np.diag(space.diagonals[s].astype(float))
        cov = market + D @ panic @ D + Rm
        sign, logdet = np.linalg.slogdet(cov)
        if np.any(sign <= 0):
            raise NumericalError("oracle covariance is not positive definite")
        sol = np.linalg.solve(cov, np.broadcast_to(resid, (len(cov), d_y))[..., None])[..., 0]
        out[:, s] = -0.5 * (d_y * np.log(2 * np.pi) + logdet + sol @ resid)
    return out


def enumerate_hmm_likelihood(theta: MslParams, space: SelectorSpace, logvol_path, y) -> float:
    """Log-likelihood given the log-vol path by summing over every regime path."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    logvol_path = np.atleast_2d(np.asarray(logvol_path, dtype=float))
    T, S = len(y), space.S_K
    P = _dense_kernel(theta.p, S)
    dens = np.vstack([dense_obs_logpdf(theta, space, logvol_path[t], y[t]) for t in range(T)])
    terms = []
    for path in itertools.product(range(S), repeat=T):
        lp = -np.log(S) + dens[0, path[0]]
        for t in range(1, T):
            lp += np.log(P[path[t - 1], path[t]]) + dens[t, path[t]]
        terms.append(lp)
    terms = np.array(terms)
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


def exact_hmm_likelihood(theta: MslParams, space: SelectorSpace, logvol_path, y,
                         cross_check: bool | None = None) -> float:
    """Forward-algorithm log-likelihood of ``y`` given a fixed log-vol path.

    When ``S_K ** T <= 10_000`` (or ``cross_check=True``) the value is also
    recomputed by path enumeration and a disagreement beyond ``1e-10``
    relative raises :class:`NumericalError`.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    logvol_path = np.atleast_2d(np.asarray(logvol_path, dtype=float))
    T, S = len(y), space.S_K
    P = _dense_kernel(theta.p, S)
    loglik = 0.0
    alpha = np.full(S, 1.0 / S)
    for t in range(T):
        if t > 0:
            alpha = alpha @ P
        logd = dense_obs_logpdf(theta, space, logvol_path[t], y[t])[0]
        m = logd.max()
        alpha = alpha * np.exp(logd - m)
        c = alpha.sum()
        loglik += m + np.log(c)
        alpha /= c
    if cross_check is None:
        cross_check = S**T <= 10_000
    if cross_check:
        brute = enumerate_hmm_likelihood(theta, space, logvol_path, y)
        if abs(brute - loglik) > 1e-10 * max(1.0, abs(loglik)):
            raise NumericalError(f"forward pass {loglik} disagrees with enumeration {brute}")
    return float(loglik)


@dataclass(frozen=True)
class GridSpec:
    """Tensor-product trapezoid grid over the log-vols.

    Each non-degenerate log-vol axis gets ``nodes`` equally spaced points
    covering ``mean +/- width`` stationary standard deviations.  Axes with a
    zero innovation variance collapse to a single point at the mean.
    ``budget`` caps the number of (grid node, regime) states per time step.
    """

    nodes: int = 41
    width: float = 7.0
    budget: int = 4_000_000
    max_T: int = 6

    def __post_init__(self):
        if self.nodes < 3:
            raise ConfigurationError("grid needs at least 3 nodes per axis")
        if self.width <= 0:
            raise ConfigurationError("grid width must be positive")

    def refined(self) -> "GridSpec":
        """Same range with the spacing halved."""
        return GridSpec(2 * self.nodes - 1, self.width, self.budget, self.max_T)


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


def _axes(theta: MslParams, grid: GridSpec):
    axes = []
    for k in range(2 * theta.d_f):
        mu, phi, q = theta.mu[k], theta.phi[k], theta.q[k]
        if q == 0:
            axes.append((np.array([mu]), np.ones(1), np.ones((1, 1))))
            continue
        sd = np.sqrt(q / (1 - phi**2))
        x = mu + sd * np.linspace(-grid.width, grid.width, grid.nodes)
        h = x[1] - x[0]
        w = np.full(grid.nodes, h)
        w[[0, -1]] = h / 2
        init = _normal_pdf(x, mu, sd**2) * w
        trans = _normal_pdf(x[None, :], mu + phi * (x[:, None] - mu), q) * w[None, :]
        axes.append((x, init, trans))
    return axes


def grid_likelihood(theta: MslParams, space: SelectorSpace, y, grid: GridSpec | None = None) -> float:
    """Log marginal likelihood by quadrature over the log-vol trajectory.

    A forward recursion over (grid node, regime) states: the AR(1)
    transition densities are applied axis by axis with trapezoid weights,
    then the dense regime kernel, then the exact Gaussian observation
    density.
    """
    grid = grid or GridSpec()
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, S = len(y), space.S_K
    if T > grid.max_T:
        raise ConfigurationError(f"grid oracle limited to T <= {grid.max_T}, got {T}")
    axes = _axes(theta, grid)
    shape = tuple(len(a[0]) for a in axes)
    n_nodes = int(np.prod(shape))
    if n_nodes * S > grid.budget:
        raise ConfigurationError(f"grid has {n_nodes * S} states per step, budget is {grid.budget}")
    mesh = np.stack(np.meshgrid(*[a[0] for a in axes], indexing="ij"), axis=-1).reshape(-1, len(axes))
    P = _dense_kernel(theta.p, S)

    def obs(t):
        chunks = [dense_obs_logpdf(theta, space, mesh[i : i + 20000], y[t]) for i in range(0, n_nodes, 20000)]
        return np.vstack(chunks).reshape(shape + (S,))

    alpha = np.full(shape + (S,), 1.0 / S)
    for k, (_, init, _) in enumerate(axes):
        alpha = alpha * init.reshape([-1 if i == k else 1 for i in range(len(shape))] + [1])
    loglik = 0.0
    for t in range(T):
        if t > 0:
            for k, (_, _, trans) in enumerate(axes):
                alpha = np.moveaxis(np.tensordot(alpha, trans, axes=([k], [0])), -1, k)
            alpha = alpha @ P
        logd = obs(t)
        m = logd.max()
        alpha = alpha * np.exp(logd - m)
        c = alpha.sum()
        if not c > 0:
            raise NumericalError(f"grid likelihood underflowed at step {t + 1}")
        loglik += m + np.log(c)
        alpha /= c
    return float(loglik)


@dataclass
class GridPosterior:
    values: np.ndarray
    density: np.ndarray

    def cdf(self, x) -> np.ndarray:
        """Trapezoid CDF interpolated linearly between grid values."""
        v, d = self.values, self.density
        c = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(v))])
        return np.interp(x, v, c / c[-1])

    @property
    def mean(self) -> float:
        return float(trapezoid(self.values * self.density, self.values))

    def ks_distance(self, draws) -> float:
        """Kolmogorov-Smirnov distance between ``draws`` and this density."""
        draws = np.sort(np.asarray(draws, dtype=float))
        n = len(draws)
        F = self.cdf(draws)
        upper = np.arange(1, n + 1) / n - F
        lower = F - np.arange(n) / n
        return float(max(upper.max(), lower.max()))


def grid_posterior_1d(theta: MslParams, space: SelectorSpace, y, name: str, values,
                      log_prior, grid: GridSpec | None = None, log_lik=None) -> GridPosterior:
    """Posterior of one scalar parameter with all others held at ``theta``.

    Parameters
    ----------
    name : parameter name as in :func:`panicfsv.model.param_names`.
    values : increasing grid of candidate values.
    log_prior : callable mapping a value to its log prior density.
    log_lik : optional callable ``theta -> log-likelihood``; defaults to
        :func:`grid_likelihood`.
    """
    values = np.asarray(values, dtype=float)
    if np.any(np.diff(values) <= 0):
        raise ConfigurationError("posterior grid must be strictly increasing")
    names = theta.names()
    idx = names.index(name)
    base = theta.to_vector()
    if log_lik is None:
        def log_lik(th):
            return grid_likelihood(th, space, y, grid)
    logpost = np.empty(len(values))
    for i, v in enumerate(values):
        lp = log_prior(v)
        if lp == -np.inf:
            logpost[i] = -np.inf
            continue
        vec = base.copy()
        vec[idx] = v
        logpost[i] = lp + log_lik(MslParams.from_vector(vec, theta.d_y, theta.d_f))
    dens = np.exp(logpost - np.max(logpost))
    dens /= trapezoid(dens, values)
    return GridPosterior(values, dens)
