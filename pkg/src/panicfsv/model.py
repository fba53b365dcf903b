"""Markov-switching panic-loadings factor stochastic volatility model.

Returns follow

    y_t = B f1_t + D(x1_t) B f2_t + v_t,        v_t ~ N(0, diag(R))
    f1_t = lam + exp(x2_t / 2) * z1_t,          f2_t = exp(x3_t / 2) * z2_t

with ``x2`` (market log-vols) and ``x3`` (panic log-vols) independent
stationary AR(1) processes and ``x1`` the regime chain of
:mod:`panicfsv.regimes`.  Log-vol vectors are always stored as the
concatenation ``[x2, x3]`` of length ``2 * d_f``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import comb, lgamma, log, pi

import numpy as np

from .exceptions import ConfigurationError, NumericalError, ParameterDomainError
from .regimes import RegimeTransition, SelectorSpace

__all__ = [
    "MslParams",
    "PriorSpec",
    "LatentPath",
    "param_names",
    "free_loading_index",
    "check_identification",
    "log_prior",
    "log_prior_terms",
    "draw_from_prior",
    "simulate",
    "conditional_cov",
    "conditional_obs_logdensity",
    "ObsDensity",
    "obs_logdensity",
    "lemma_transform_scale",
    "lemma_transform_permute",
    "lemma_transform_sign",
]

LOG_2PI = log(2.0 * pi)


@dataclass
class MslParams:
    """Full parameter collection of the model.

    Attributes
    ----------
    B : (d_y, d_f) loadings.
    R : (d_y,) idiosyncratic variances.
    mu, phi, q : (2 d_f,) log-vol means, AR coefficients and innovation
        variances, market block first then panic block.
    lam : (d_f,) risk premia of the market factor.
    p : regime persistence.

    Domains are checked on construction.  The loadings identification
    constraint is *not*, because the invariance transforms produce
    unconstrained loadings on purpose; see :func:`check_identification`.
    A zero innovation variance is allowed and gives a deterministic log-vol.
    """

    B: np.ndarray
    R: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    p: float

    def __post_init__(self):
        self.B = np.array(self.B, dtype=float, ndmin=2)
        d_y, d_f = self.B.shape
        self.R = np.array(self.R, dtype=float).reshape(-1)
        self.mu = np.array(self.mu, dtype=float).reshape(-1)
        self.phi = np.array(self.phi, dtype=float).reshape(-1)
        self.q = np.array(self.q, dtype=float).reshape(-1)
        self.lam = np.array(self.lam, dtype=float).reshape(-1)
        self.p = float(self.p)
        if self.R.shape != (d_y,):
            raise ConfigurationError(f"R must have length d_y={d_y}")
        for name in ("mu", "phi", "q"):
            if getattr(self, name).shape != (2 * d_f,):
                raise ConfigurationError(f"{name} must have length 2*d_f={2 * d_f}")
        if self.lam.shape != (d_f,):
            raise ConfigurationError(f"lam must have length d_f={d_f}")
        if not np.all(np.isfinite(self.B)) or not np.all(np.isfinite(self.mu)):
            raise ParameterDomainError("loadings and log-vol means must be finite")
        if not np.all(np.isfinite(self.lam)):
            raise ParameterDomainError("risk premia must be finite")
        if not np.all((self.R > 0) & np.isfinite(self.R)):
            raise ParameterDomainError(f"R must be positive and finite, got {self.R}")
        if not np.all((self.q >= 0) & np.isfinite(self.q)):
            raise ParameterDomainError(f"q must be non-negative, got {self.q}")
        if not np.all(np.abs(self.phi) < 1):
            raise ParameterDomainError(f"|phi| must be < 1 for stationarity, got {self.phi}")
        if not 0.0 < self.p < 1.0:
            raise ParameterDomainError(f"p must lie in (0, 1), got {self.p}")

    @property
    def d_y(self) -> int:
        return self.B.shape[0]

    @property
    def d_f(self) -> int:
        return self.B.shape[1]

    @property
    def stationary_var(self) -> np.ndarray:
        return self.q / (1.0 - self.phi**2)

    @property
    def mean(self) -> np.ndarray:
        """Conditional (and unconditional) mean of the returns, ``B lam``."""
        return self.B @ self.lam

    def transition(self, S_K: int) -> RegimeTransition:
        return RegimeTransition(self.p, S_K)

    def replace(self, **changes) -> "MslParams":
        return replace(self, **changes)

    def names(self) -> list[str]:
        return param_names(self.d_y, self.d_f)

    def to_vector(self) -> np.ndarray:
        """Free parameters in table order (see :func:`param_names`)."""
        rows, cols = free_loading_index(self.d_y, self.d_f)
        return np.concatenate(
            [self.B[rows, cols], self.phi, self.mu, self.q, self.R, self.lam, [self.p]]
        )

    @classmethod
    def from_vector(cls, vec, d_y: int, d_f: int = 1) -> "MslParams":
        vec = np.asarray(vec, dtype=float)
        rows, cols = free_loading_index(d_y, d_f)
        n_b = len(rows)
        expected = n_b + 6 * d_f + d_y + d_f + 1
        if vec.shape != (expected,):
            raise ConfigurationError(f"expected {expected} values, got {vec.shape}")
        B = np.zeros((d_y, d_f))
        B[np.arange(d_f), np.arange(d_f)] = 1.0
        B[rows, cols] = vec[:n_b]
        k = n_b
        phi = vec[k : k + 2 * d_f]
        k += 2 * d_f
        mu = vec[k : k + 2 * d_f]
        k += 2 * d_f
        q = vec[k : k + 2 * d_f]
        k += 2 * d_f
        R = vec[k : k + d_y]
        k += d_y
        lam = vec[k : k + d_f]
        return cls(B=B, R=R, mu=mu, phi=phi, q=q, lam=lam, p=vec[-1])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names(), self.to_vector().tolist()))

    @classmethod
    def from_dict(cls, values: dict[str, float]) -> "MslParams":
        d_y = sum(1 for k in values if k.startswith("R") and k[1:].isdigit())
        d_f = sum(1 for k in values if k.startswith("lambda"))
        if d_y == 0 or d_f == 0:
            raise ConfigurationError("parameter record needs R1.. and lambda1.. entries")
        names = param_names(d_y, d_f)
        missing = [n for n in names if n not in values]
        extra = [k for k in values if k not in names]
        if missing or extra:
            raise ConfigurationError(f"parameter record mismatch: missing={missing} extra={extra}")
        return cls.from_vector([values[n] for n in names], d_y, d_f)


def free_loading_index(d_y: int, d_f: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the free (strictly lower) loadings, row-major."""
    pairs = [(i, j) for i in range(d_y) for j in range(d_f) if i > j]
    if not pairs:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    rows, cols = zip(*pairs)
    return np.array(rows), np.array(cols)


def param_names(d_y: int, d_f: int = 1) -> list[str]:
    """Names in the order used by estimates tables.

    For ``d_f = 1`` these are ``beta2..beta{d_y}, phi1, phi2, mu1, mu2, ss1,
    ss2, R1..R{d_y}, lambda1, p``.
    """
    rows, cols = free_loading_index(d_y, d_f)
    if d_f == 1:
        betas = [f"beta{i + 1}" for i in rows]
    else:
        betas = [f"beta{i + 1}_{j + 1}" for i, j in zip(rows, cols)]
    k = range(1, 2 * d_f + 1)
    return (
        betas
        + [f"phi{i}" for i in k]
        + [f"mu{i}" for i in k]
        + [f"ss{i}" for i in k]
        + [f"R{i}" for i in range(1, d_y + 1)]
        + [f"lambda{i}" for i in range(1, d_f + 1)]
        + ["p"]
    )


def check_identification(theta: MslParams) -> None:
    """Raise :class:`ConfigurationError` unless the loadings are in the
    lower-triangular unit-diagonal form and ``d_f`` is small enough."""
    d_y, d_f = theta.d_y, theta.d_f
    if d_f >= d_y:
        raise ConfigurationError(f"need d_f < d_y, got d_f={d_f}, d_y={d_y}")
    top = theta.B[:d_f, :d_f]
    if not np.array_equal(np.diag(top), np.ones(d_f)) or np.any(np.triu(top, 1) != 0):
        raise ConfigurationError("loadings must have unit diagonal and zeros above it")
    n_free = len(free_loading_index(d_y, d_f)[0]) + d_y
    if not n_free < d_y + comb(d_y, 2):
        raise ConfigurationError(
            f"d_f={d_f} gives {n_free} free covariance parameters, "
            f"need fewer than {d_y + comb(d_y, 2)}"
        )


@dataclass(frozen=True)
class PriorSpec:
    """Independent prior on every parameter block.

    Normal scales are variances.  Inverse-gamma blocks are parameterized by
    ``(shape, scale)`` with density proportional to ``x^(-shape-1) exp(-scale/x)``.
    """

    loading_mean: float = 1.0
    loading_var: float = 0.125
    phi_low: float = 0.4
    phi_high: float = 0.9
    lambda_low: float = 1.5e-4
    lambda_high: float = 2.708178e-3
    R_shape: float = 0.001
    R_scale: float = 0.001
    mu_mean: float = 0.0
    mu_var: float = 1.0
    q_shape: float = 1.0
    q_scale: float = 1.0
    p_low: float = 0.0
    p_high: float = 1.0

    def __post_init__(self):
        vals = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(np.isfinite(vals)):
            raise ConfigurationError("prior hyperparameters must be finite")
        for lo, hi in (("phi_low", "phi_high"), ("lambda_low", "lambda_high"), ("p_low", "p_high")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ConfigurationError(f"prior bounds {lo} < {hi} violated")
        if not (0.0 <= self.p_low and self.p_high <= 1.0):
            raise ConfigurationError("p prior bounds must lie inside [0, 1]")
        if min(self.loading_var, self.mu_var, self.R_shape, self.R_scale, self.q_shape, self.q_scale) <= 0:
            raise ConfigurationError("prior scales and shapes must be positive")

    def bounds(self) -> dict[str, tuple[float, float]]:
        return {
            "phi": (self.phi_low, self.phi_high),
            "lambda": (self.lambda_low, self.lambda_high),
            "p": (self.p_low, self.p_high),
        }


def _normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + log(var)) - 0.5 * (x - mean) ** 2 / var


def _invgamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = shape * log(scale) - lgamma(shape) - (shape + 1) * np.log(x) - scale / x
    return np.where(x > 0, val, -np.inf)


def _uniform_logpdf(x, low, high):
    x = np.asarray(x, dtype=float)
    return np.where((x > low) & (x < high), -log(high - low), -np.inf)


def log_prior_terms(theta: MslParams, prior: PriorSpec | None = None) -> np.ndarray:
    """Per-parameter log prior densities, aligned with ``theta.names()``."""
    prior = prior or PriorSpec()
    rows, cols = free_loading_index(theta.d_y, theta.d_f)
    return np.concatenate([
        _normal_logpdf(theta.B[rows, cols], prior.loading_mean, prior.loading_var),
        _uniform_logpdf(theta.phi, prior.phi_low, prior.phi_high),
        _normal_logpdf(theta.mu, prior.mu_mean, prior.mu_var),
        _invgamma_logpdf(theta.q, prior.q_shape, prior.q_scale),
        _invgamma_logpdf(theta.R, prior.R_shape, prior.R_scale),
        _uniform_logpdf(theta.lam, prior.lambda_low, prior.lambda_high),
        np.atleast_1d(_uniform_logpdf(theta.p, prior.p_low, prior.p_high)),
    ])


def log_prior(theta: MslParams, prior: PriorSpec | None = None, names=None) -> float:
    """Log prior density; ``-inf`` off the support.

    ``names`` restricts the sum to a subset of parameters, which is the
    right target when the others are held fixed.
    """
    terms = log_prior_terms(theta, prior)
    if names is not None:
        all_names = theta.names()
        terms = terms[[all_names.index(n) for n in names]]
    if np.any(terms == -np.inf):
        return -np.inf
    return float(np.sum(terms))


def draw_from_prior(prior: PriorSpec, d_y: int, d_f: int, rng: np.random.Generator,
                    R: np.ndarray | None = None) -> MslParams:
    """One draw from ``prior``; pass ``R`` to pin the idiosyncratic variances.

    The default ``InverseGamma(0.001, 0.001)`` on ``R`` routinely produces
    values that overflow, so callers that need a usable starting point
    should supply ``R`` from the data.
    """
    rows, cols = free_loading_index(d_y, d_f)
    B = np.zeros((d_y, d_f))
    B[np.arange(d_f), np.arange(d_f)] = 1.0
    B[rows, cols] = rng.normal(prior.loading_mean, np.sqrt(prior.loading_var), len(rows))
    if R is None:
        R = prior.R_scale / rng.gamma(prior.R_shape, 1.0, d_y)
    n = 2 * d_f
    return MslParams(
        B=B,
        R=R,
        mu=rng.normal(prior.mu_mean, np.sqrt(prior.mu_var), n),
        phi=rng.uniform(prior.phi_low, prior.phi_high, n),
        q=prior.q_scale / rng.gamma(prior.q_shape, 1.0, n),
        lam=rng.uniform(prior.lambda_low, prior.lambda_high, d_f),
        p=rng.uniform(prior.p_low, prior.p_high),
    )


@dataclass
class LatentPath:
    """Hidden trajectories behind a simulated return series.

    ``regimes`` holds 1-based labels, ``logvol`` the stacked ``[x2, x3]``
    and ``factors`` the stacked ``[f1, f2]``.
    """

    regimes: np.ndarray
    logvol: np.ndarray
    factors: np.ndarray = field(repr=False)


def simulate(theta: MslParams, space: SelectorSpace, T: int, seed=None):
    """Draw ``T`` periods of returns and the latent path that produced them.

    Returns
    -------
    y : ndarray of shape (T, d_y)
    truth : LatentPath
    """
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if space.d_y != theta.d_y:
        raise ConfigurationError("selector space and parameters disagree on d_y")
    rng = np.random.default_rng(seed)
    d_y, d_f = theta.d_y, theta.d_f
    S = space.S_K
    trans = theta.transition(S)

    regimes = np.empty(T, dtype=int)
    regimes[0] = rng.integers(S)
    for t in range(1, T):
        if S > 1 and rng.random() >= trans.p:
            # uniform over the other S-1 regimes
            j = rng.integers(S - 1)
            regimes[t] = j + (j >= regimes[t - 1])
        else:
            regimes[t] = regimes[t - 1]

    sd = np.sqrt(theta.q)
    logvol = np.empty((T, 2 * d_f))
    logvol[0] = theta.mu + np.sqrt(theta.stationary_var) * rng.standard_normal(2 * d_f)
    for t in range(1, T):
        logvol[t] = theta.mu + theta.phi * (logvol[t - 1] - theta.mu) + sd * rng.standard_normal(2 * d_f)

    z = rng.standard_normal((T, 2 * d_f))
    f1 = theta.lam + np.exp(logvol[:, :d_f] / 2) * z[:, :d_f]
    f2 = np.exp(logvol[:, d_f:] / 2) * z[:, d_f:]
    masks = space.masks[regimes]
    v = rng.standard_normal((T, d_y)) * np.sqrt(theta.R)
    y = f1 @ theta.B.T + masks * (f2 @ theta.B.T) + v
    truth = LatentPath(regimes=regimes + 1, logvol=logvol, factors=np.hstack([f1, f2]))
    return y, truth


def _covariances(theta: MslParams, masks: np.ndarray, logvols: np.ndarray) -> np.ndarray:
    """Conditional covariances, shape ``logvols.shape[:-1] + (S, d_y, d_y)``."""
    d_f = theta.d_f
    B = theta.B
    outer = B.T[:, :, None] * B.T[:, None, :]  # (d_f, d_y, d_y)
    pair = masks[:, None, :] * masks[:, :, None]  # (S, d_y, d_y)
    e2 = np.exp(logvols[..., :d_f])[..., None, None]
    e3 = np.exp(logvols[..., d_f:])[..., None, None]
    market = (e2 * outer).sum(axis=-3)  # (..., d_y, d_y)
    panic = (e3 * outer).sum(axis=-3)
    cov = market[..., None, :, :] + panic[..., None, :, :] * pair
    idx = np.arange(theta.d_y)
    cov[..., idx, idx] += theta.R
    return cov


class ObsDensity:
    """Observation log-densities for a fixed parameter and return series.

    The covariance is ``R + W E W'`` with ``W = [B, M B]`` and
    ``E = diag(exp(logvol))``, so determinant and quadratic form reduce to
    the ``2 d_f`` capacitance matrix ``I + E^1/2 W' R^-1 W E^1/2``.  Every
    piece that does not depend on the log-vols is computed once here, which
    leaves only the small capacitance solve per particle and step.

    Parameters
    ----------
    masks : (S, d_y) selector diagonals as floats.
    y : (T, d_y) returns.
    """

    def __init__(self, theta: MslParams, masks: np.ndarray, y: np.ndarray):
        masks = np.asarray(masks, dtype=float)
        B, R = theta.B, theta.R
        resid = np.atleast_2d(np.asarray(y, dtype=float)) - theta.mean  # (T, d_y)
        Rinv_B = B / R[:, None]
        G = B.T @ Rinv_B  # (d_f, d_f)
        H = np.einsum("ak,sa,al->skl", B, masks, Rinv_B)  # B' M R^-1 B per regime
        top = np.broadcast_to(G, H.shape)
        self.K = np.concatenate([np.concatenate([top, H], axis=-1), np.concatenate([H, H], axis=-1)], axis=-2)
        a = resid @ Rinv_B  # (T, d_f)
        S = len(masks)
        panic = np.einsum("sa,ta,ak->tsk", masks, resid, Rinv_B)  # (T, S, d_f)
        self.v = np.concatenate([np.broadcast_to(a[:, None, :], panic.shape), panic], axis=-1)
        with np.errstate(over="ignore", invalid="ignore"):
            quad_R = np.einsum("ta,ta->t", resid, resid / R)
        self.const = -0.5 * (theta.d_y * LOG_2PI + np.sum(np.log(R)) + quad_R)  # (T,)
        self.S = S

    def __call__(self, t: int, logvols: np.ndarray) -> np.ndarray:
        """Log-densities of ``y[t]``, shape ``logvols.shape[:-1] + (S,)``."""
        half = np.exp(0.5 * np.asarray(logvols, dtype=float))[..., None, :]  # (..., 1, 2 d_f)
        with np.errstate(over="ignore", invalid="ignore"):
            cap = half[..., :, None] * self.K * half[..., None, :]
            idx = np.arange(self.K.shape[-1])
            cap[..., idx, idx] += 1.0
            logdet_cap, quad_cap = _chol_logdet_quad(cap, half * self.v[t])
            out = self.const[t] - 0.5 * (logdet_cap - quad_cap)
        # an overflowing residual has zero density, not an undefined one
        return np.where(np.isnan(out), -np.inf, out)


def obs_logdensity(theta: MslParams, masks: np.ndarray, logvols: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized ``log g(y | regime, logvol)`` for every regime mask.

    Parameters
    ----------
    masks : (S, d_y) selector diagonals as floats.
    logvols : (..., 2 d_f) stacked log-vols.
    y : (d_y,) one return vector.

    Returns
    -------
    ndarray of shape ``logvols.shape[:-1] + (S,)``

    See Also
    --------
    ObsDensity : the same computation with the parameter-only work cached.
    """
    return ObsDensity(theta, masks, np.asarray(y, dtype=float)[None, :])(0, logvols)


def _chol_logdet_quad(cov: np.ndarray, resid: np.ndarray):
    """Log-determinants and Mahalanobis terms for a stack of SPD matrices.

    Column-by-column Cholesky with the forward substitution of ``resid``
    folded in.  Every operation is vectorized across the stack, which beats
    one LAPACK call per matrix by a wide margin for the small ``d_y`` used
    here.
    """
    d = cov.shape[-1]
    batch = cov.shape[:-2]
    if d == 2:
        a, b, c = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
        r0, r1 = resid[..., 0], resid[..., 1]
        det = a * c - b * b
        if not (np.all(a > 0) and np.all(det > 0)):
            raise NumericalError("conditional covariance is not positive definite")
        quad = (c * r0 * r0 - 2.0 * b * r0 * r1 + a * r1 * r1) / det
        return np.log(det), np.broadcast_to(quad, batch)
    C = np.moveaxis(cov.reshape(-1, d, d), 0, -1)  # (d, d, N)
    r = np.broadcast_to(resid, batch + (d,)).reshape(-1, d).T  # (d, N); resid may vary per matrix
    L = np.zeros_like(C)
    u = np.empty_like(r)
    logdet = np.zeros(C.shape[-1])
    for j in range(d):
        s = C[j, j] - np.einsum("kn,kn->n", L[j, :j], L[j, :j])
        if not np.all(s > 0):
            raise NumericalError("conditional covariance is not positive definite")
        ljj = np.sqrt(s)
        L[j, j] = ljj
        if j + 1 < d:
            L[j + 1 :, j] = (C[j + 1 :, j] - np.einsum("ikn,kn->in", L[j + 1 :, :j], L[j, :j])) / ljj
        u[j] = (r[j] - np.einsum("kn,kn->n", L[j, :j], u[:j])) / ljj
        logdet += np.log(ljj)
    quad = np.einsum("jn,jn->n", u, u)
    return 2.0 * logdet.reshape(batch), quad.reshape(batch)


def conditional_cov(theta: MslParams, space: SelectorSpace, regime: int, logvol) -> np.ndarray:
    """``Var[y_t | regime, logvol]`` for one 1-based regime."""
    mask = space.masks[regime - 1 : regime]
    return _covariances(theta, mask, np.asarray(logvol, dtype=float))[0]


def conditional_obs_logdensity(theta: MslParams, space: SelectorSpace, regime: int, logvol, y) -> float:
    if not 1 <= regime <= space.S_K:
        raise IndexError(f"regime {regime} outside 1..{space.S_K}")
    mask = space.masks[regime - 1 : regime]
    return float(obs_logdensity(theta, mask, np.asarray(logvol, dtype=float), y)[0])


def lemma_transform_scale(theta: MslParams, scale) -> MslParams:
    """Rescale factor columns by positive ``scale`` (a vector or diagonal matrix).

    Loadings are multiplied by the scale, the risk premia divided by it, and
    both log-vol mean blocks shifted by ``2 log(1 / scale)`` so the factor
    contributions are unchanged.  The result generally breaks the unit
    diagonal of ``B``.
    """
    s = np.asarray(scale, dtype=float)
    if s.ndim == 2:
        if np.any(s != np.diag(np.diag(s))):
            raise ParameterDomainError("scale matrix must be diagonal")
        s = np.diag(s)
    if s.shape != (theta.d_f,) or np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ParameterDomainError(f"scale must be {theta.d_f} positive values, got {s}")
    u = 2.0 * np.log(1.0 / s)
    return theta.replace(B=theta.B * s, mu=theta.mu + np.tile(u, 2), lam=theta.lam / s)


def _as_permutation(perm, d_f: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.ndim == 2:
        ok = perm.shape == (d_f, d_f) and np.all((perm == 0) | (perm == 1))
        if not (ok and np.all(perm.sum(0) == 1) and np.all(perm.sum(1) == 1)):
            raise ParameterDomainError("not a permutation matrix")
        return perm.argmax(axis=1)
    perm = perm.astype(int)
    if sorted(perm.tolist()) != list(range(d_f)):
        raise ParameterDomainError(f"{perm} is not a permutation of 0..{d_f - 1}")
    return perm


def lemma_transform_permute(theta: MslParams, perm) -> MslParams:
    """Relabel the factors by ``perm`` (index array or permutation matrix).

    With ``P[i, perm[i]] = 1`` this maps ``B -> B P^T`` and permutes ``lam``
    and each of the two log-vol blocks by the same ``P``.
    """
    d_f = theta.d_f
    idx = _as_permutation(perm, d_f)
    block = np.concatenate([idx, idx + d_f])
    return theta.replace(
        B=theta.B[:, idx],
        mu=theta.mu[block],
        phi=theta.phi[block],
        q=theta.q[block],
        lam=theta.lam[idx],
    )


def lemma_transform_sign(theta: MslParams, signs) -> MslParams:
    """Flip the sign of selected factor columns.

    ``lam`` is flipped along with the columns; otherwise the mean ``B lam``
    changes sign and the likelihood is only preserved when ``lam = 0``.
    """
    s = np.asarray(signs, dtype=float)
    if s.ndim == 2:
        s = np.diag(s)
    if s.shape != (theta.d_f,) or not np.all(np.abs(s) == 1):
        raise ParameterDomainError(f"signs must be {theta.d_f} values of +/-1, got {s}")
    return theta.replace(B=theta.B * s, lam=theta.lam * s)
