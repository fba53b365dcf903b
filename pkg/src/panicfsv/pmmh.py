"""Particle-marginal Metropolis-Hastings with averaged RBPF likelihoods.

The random walk runs on an unconstrained reparameterization of the free
parameters (log for variances, scaled logit for the bounded blocks) with
the Jacobian folded into the target.  The proposal covariance follows the
adaptive Metropolis recursion: fixed at ``sigma0`` up to ``t0``, then
``2.4^2 / d * (S + eps I)`` from the running sample covariance ``S`` of the
chain, frozen after ``t1``.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigurationError, FilterDegeneracyError
from .model import MslParams, PriorSpec, check_identification, draw_from_prior, log_prior
from .rbpf import rbpf_loglik
from .regimes import SelectorSpace

__all__ = [
    "AdaptSchedule",
    "ParamTransform",
    "RunningCovariance",
    "ChainState",
    "Chain",
    "SummaryRow",
    "adapt_covariance",
    "run_adaptive_mh",
    "pmmh_run",
    "default_initial_theta",
    "replica_seeds",
    "batch_means_mcse",
    "summarize_chain",
    "summarize_samples",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "PANICFSV_WORKERS"


@dataclass(frozen=True)
class AdaptSchedule:
    """Adaptation window and initial proposal.

    ``sigma0`` defaults to ``sigma0_scale * I`` when left as ``None``.
    """

    t0: int = 150
    t1: int = 1000
    epsilon: float = 1e-8
    sigma0: np.ndarray | None = None
    sigma0_scale: float = 0.01

    def __post_init__(self):
        if not 0 < self.t0 < self.t1:
            raise ConfigurationError(f"need 0 < t0 < t1, got t0={self.t0}, t1={self.t1}")
        if self.epsilon < 0 or self.sigma0_scale <= 0:
            raise ConfigurationError("epsilon must be >= 0 and sigma0_scale > 0")

    def initial(self, d: int) -> np.ndarray:
        if self.sigma0 is None:
            return self.sigma0_scale * np.eye(d)
        s = np.array(self.sigma0, dtype=float, ndmin=2)
        if s.shape != (d, d):
            raise ConfigurationError(f"sigma0 must be {d}x{d}")
        return s


def adapt_covariance(history, schedule: AdaptSchedule, i: int) -> np.ndarray:
    """Proposal covariance for iteration ``i`` (1-based) from a batch of past draws.

    ``history`` holds the chain in transformed coordinates, row ``k`` being
    iteration ``k + 1``; only the first ``i - 1`` rows are used.
    """
    history = np.atleast_2d(np.asarray(history, dtype=float))
    d = history.shape[1]
    if i < 1:
        raise ValueError("iterations are numbered from 1")
    if i > schedule.t1:
        i = schedule.t1
    if i <= schedule.t0 or i - 1 < 2:
        return schedule.initial(d)
    S = np.cov(history[: i - 1], rowvar=False, ddof=1).reshape(d, d)
    return 2.4**2 / d * (S + schedule.epsilon * np.eye(d))


class RunningCovariance:
    """Welford accumulator for the sample mean and covariance of vectors."""

    def __init__(self, d: int):
        self.n = 0
        self.mean = np.zeros(d)
        self._m2 = np.zeros((d, d))

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + np.outer(delta, x - self.mean)

    @property
    def cov(self) -> np.ndarray:
        if self.n < 2:
            raise ValueError("need two samples for a covariance")
        return self._m2 / (self.n - 1)


def _logit_bounds(name: str, prior: PriorSpec):
    if name.startswith("phi"):
        return prior.phi_low, prior.phi_high
    if name.startswith("lambda"):
        return prior.lambda_low, prior.lambda_high
    if name == "p":
        return prior.p_low, prior.p_high
    return None


class ParamTransform:
    """Bijection between model parameters and an unconstrained vector.

    Only the names in ``free`` move; every other parameter stays at its
    value in ``template``.
    """

    def __init__(self, template: MslParams, prior: PriorSpec, free: Sequence[str] | None = None):
        self.template = template
        self.prior = prior
        self.names = template.names()
        self.free = list(self.names if free is None else free)
        unknown = [n for n in self.free if n not in self.names]
        if unknown or not self.free:
            raise ConfigurationError(f"bad free parameter list {self.free}")
        self.index = np.array([self.names.index(n) for n in self.free])
        kinds = []
        for n in self.free:
            bounds = _logit_bounds(n, prior)
            if bounds is not None:
                kinds.append(("logit",) + bounds)
            elif n.startswith(("ss", "R")):
                kinds.append(("log",))
            else:
                kinds.append(("id",))
        self.kinds = kinds

    @property
    def dim(self) -> int:
        return len(self.free)

    def to_z(self, theta: MslParams) -> np.ndarray:
        x = theta.to_vector()[self.index]
        z = np.empty(self.dim)
        for k, kind in enumerate(self.kinds):
            if kind[0] == "logit":
                a, b = kind[1], kind[2]
                if not a < x[k] < b:
                    raise ConfigurationError(f"{self.free[k]}={x[k]} outside its prior support ({a}, {b})")
                z[k] = np.log(x[k] - a) - np.log(b - x[k])
            elif kind[0] == "log":
                if not x[k] > 0:
                    raise ConfigurationError(f"{self.free[k]} must be positive")
                z[k] = np.log(x[k])
            else:
                z[k] = x[k]
        return z

    def natural(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x = np.empty(self.dim)
        for k, kind in enumerate(self.kinds):
            if kind[0] == "logit":
                a, b = kind[1], kind[2]
                x[k] = a + (b - a) / (1.0 + np.exp(-z[k]))
            elif kind[0] == "log":
                x[k] = np.exp(z[k])
            else:
                x[k] = z[k]
        return x

    def to_theta(self, z) -> MslParams:
        vec = self.template.to_vector()
        vec[self.index] = self.natural(z)
        return MslParams.from_vector(vec, self.template.d_y, self.template.d_f)

    def log_jacobian(self, z) -> float:
        """``log |d theta / d z|``."""
        z = np.asarray(z, dtype=float)
        total = 0.0
        for k, kind in enumerate(self.kinds):
            if kind[0] == "logit":
                total += np.log(kind[2] - kind[1]) - np.logaddexp(0.0, -z[k]) - np.logaddexp(0.0, z[k])
            elif kind[0] == "log":
                total += z[k]
        return float(total)


@dataclass
class ChainState:
    """One iteration of the sampler.

    ``proposal_cov`` is the covariance that generated this iteration's
    proposal; iterations sharing a covariance share the same array object.
    """

    z: np.ndarray
    theta: object
    log_prior: float
    log_jacobian: float
    avg_loglik: float
    accepted: bool
    proposal_cov: np.ndarray = field(repr=False)

    @property
    def log_target(self) -> float:
        return self.log_prior + self.log_jacobian + self.avg_loglik


@dataclass
class Chain:
    states: list
    names: list
    free: list

    def __len__(self) -> int:
        return len(self.states)

    @property
    def acceptance_rate(self) -> float:
        if len(self.states) < 2:
            return float("nan")
        return float(np.mean([s.accepted for s in self.states[1:]]))

    def samples(self) -> np.ndarray:
        """Natural-scale parameter draws, one row per iteration."""
        return np.array([s.theta.to_vector() for s in self.states])

    def z_samples(self) -> np.ndarray:
        return np.array([s.z for s in self.states])

    def logliks(self) -> np.ndarray:
        return np.array([s.avg_loglik for s in self.states])


def _chol(cov):
    return np.linalg.cholesky(cov)


def run_adaptive_mh(z0, log_prior_fn: Callable, loglik_fn: Callable, n_iters: int,
                    schedule: AdaptSchedule, rng: np.random.Generator,
                    callback: Callable | None = None) -> list[ChainState]:
    """Generic adaptive random-walk MH on ``z``.

    Parameters
    ----------
    log_prior_fn : ``z -> (log_prior, log_jacobian, theta)``
        ``log_prior = -inf`` rejects the proposal without calling
        ``loglik_fn``.
    loglik_fn : ``(theta, i) -> float``
        Log of an unbiased likelihood estimate for iteration ``i``.  It may
        raise :class:`FilterDegeneracyError`, which rejects the proposal.
    callback : called as ``callback(i, state)`` after every iteration.

    Rejected iterations carry over the incumbent's stored likelihood
    estimate; it is never recomputed.
    """
    z = np.array(z0, dtype=float)
    d = z.size
    lp, lj, theta = log_prior_fn(z)
    if lp == -np.inf:
        raise ConfigurationError("initial state has zero prior density")
    ll = loglik_fn(theta, 1)
    if not np.isfinite(ll):
        raise FilterDegeneracyError(0, "likelihood estimate at the initial state is zero")
    sigma0 = schedule.initial(d)
    cur = ChainState(z, theta, lp, lj, ll, True, sigma0)
    states = [cur]
    if callback:
        callback(1, cur)
    running = RunningCovariance(d)
    running.update(z)
    cov, chol = sigma0, _chol(sigma0)
    eye = np.eye(d)
    for i in range(2, n_iters + 1):
        if schedule.t0 < i <= schedule.t1 and running.n >= 2:
            cov = 2.4**2 / d * (running.cov + schedule.epsilon * eye)
            chol = _chol(cov)
        prop_z = cur.z + chol @ rng.standard_normal(d)
        log_u = np.log1p(-rng.random())  # U in (0, 1]
        accepted = False
        plp, plj, ptheta = log_prior_fn(prop_z)
        if plp > -np.inf:
            try:
                pll = loglik_fn(ptheta, i)
            except FilterDegeneracyError as exc:
                log.warning("iteration %d: proposal rejected, %s", i, exc)
                pll = -np.inf
            if np.isfinite(pll):
                delta = (plp + plj + pll) - cur.log_target
                accepted = bool(log_u < delta)
        if accepted:
            cur = ChainState(prop_z, ptheta, plp, plj, pll, True, cov)
        else:
            cur = ChainState(cur.z, cur.theta, cur.log_prior, cur.log_jacobian, cur.avg_loglik, False, cov)
        states.append(cur)
        running.update(cur.z)
        if callback:
            callback(i, cur)
    return states


def replica_seeds(seed: int, iteration: int, n_p: int) -> list[np.random.SeedSequence]:
    """Independent seeds for the filter replicas of one iteration."""
    return [np.random.SeedSequence(seed, spawn_key=(1, iteration, r)) for r in range(n_p)]


def _chunk_loglik(theta, space, y, n_particles, seeds):
    return rbpf_loglik(theta, space, y, n_particles, seeds)


def resolve_workers(workers: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
    return max(1, int(workers or 1))


def default_initial_theta(y, prior: PriorSpec, space: SelectorSpace, d_f: int = 1,
                          seed=None, n_particles: int = 50, max_tries: int = 100) -> MslParams:
    """Prior draw retried until a filter returns a finite log-likelihood.

    ``R`` is pinned at half the sample variance of each return series since
    the default inverse-gamma prior on it produces unusable draws.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rng = np.random.default_rng(seed)
    R = 0.5 * y.var(axis=0, ddof=1) if len(y) > 1 else np.ones(y.shape[1])
    R = np.where(R > 0, R, 1.0)
    for _ in range(max_tries):
        theta = draw_from_prior(prior, y.shape[1], d_f, rng, R=R)
        try:
            ll = rbpf_loglik(theta, space, y, n_particles, [rng.integers(2**63)])[0]
        except FilterDegeneracyError:
            continue
        if np.isfinite(ll):
            return theta
    raise FilterDegeneracyError(0, f"no prior draw gave a finite likelihood in {max_tries} tries")


def pmmh_run(y, prior: PriorSpec, init_theta: MslParams | None, n_iters: int, n_p: int,
             n_particles: int, schedule: AdaptSchedule | None = None, seed: int = 0,
             space: SelectorSpace | None = None, free: Sequence[str] | None = None,
             workers: int | None = None, progress_every: int = 0) -> Chain:
    """Run the PMMH chain.

    Every iteration runs ``n_p`` independent filters with ``n_particles``
    particles each and averages their likelihood estimates (not their
    logs).  Replica seeds are derived from ``(seed, iteration, replica)`` so
    the chain is identical for any ``workers`` setting.

    Parameters
    ----------
    init_theta : starting parameters, or ``None`` for
        :func:`default_initial_theta`.
    free : names of the parameters to sample; the rest stay at
        ``init_theta``.  Defaults to all of them.
    workers : processes used to run the replicas; ``1`` runs them all in one
        vectorized pass.  Overridden by the ``PANICFSV_WORKERS`` variable.
    """
    if space is None:
        raise ConfigurationError("a selector space is required")
    if n_iters < 1 or n_p < 1 or n_particles < 1:
        raise ConfigurationError("n_iters, n_p and n_particles must be positive")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    schedule = schedule or AdaptSchedule()
    if init_theta is None:
        init_theta = default_initial_theta(y, prior, space, 1, seed=np.random.SeedSequence(seed, spawn_key=(2,)),
                                           n_particles=n_particles)
    check_identification(init_theta)
    transform = ParamTransform(init_theta, prior, free)
    workers = min(resolve_workers(workers), n_p)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))

    def log_prior_fn(z):
        try:
            theta = transform.to_theta(z)
        except (ValueError, ArithmeticError):
            return -np.inf, 0.0, None
        return log_prior(theta, prior, transform.free), transform.log_jacobian(z), theta

    pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def loglik_fn(theta, i):
        seeds = replica_seeds(seed, i, n_p)
        if pool is None:
            lls = rbpf_loglik(theta, space, y, n_particles, seeds)
        else:
            chunks = [seeds[k::workers] for k in range(workers)]
            parts = list(pool.map(_chunk_loglik, *zip(*[(theta, space, y, n_particles, c) for c in chunks])))
            lls = np.empty(n_p)
            for k, part in enumerate(parts):
                lls[k::workers] = part
        if not np.any(np.isfinite(lls)):
            raise FilterDegeneracyError(0, f"all {n_p} filter replicas degenerated")
        return float(logsumexp(lls) - np.log(n_p))

    accepts = []

    def progress(i, state):
        accepts.append(state.accepted)
        if progress_every and i % progress_every == 0:
            rate = np.mean(accepts[-progress_every:])
            log.info("iteration %d/%d acceptance(last %d)=%.3f loglik=%.3f",
                     i, n_iters, progress_every, rate, state.avg_loglik)

    z0 = transform.to_z(init_theta)
    try:
        states = run_adaptive_mh(z0, log_prior_fn, loglik_fn, n_iters, schedule, rng, progress)
    except FilterDegeneracyError as exc:
        if len(accepts) == 0:
            raise FilterDegeneracyError(0, f"filter degenerated at the initial parameters: {exc}") from exc
        raise
    finally:
        if pool is not None:
            pool.shutdown()
    return Chain(states, transform.names, transform.free)


def batch_means_mcse(x) -> float:
    """Batch-means Monte Carlo standard error of the mean of ``x``.

    Uses ``floor(sqrt(n))`` batches of ``floor(sqrt(n))`` draws.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    b = int(np.floor(np.sqrt(n)))
    a = n // b if b else 0
    if a < 2:
        return float("nan")
    if np.all(x == x[0]):
        return 0.0
    means = x[: a * b].reshape(a, b).mean(axis=1)
    var = b * np.sum((means - x[: a * b].mean()) ** 2) / (a - 1)
    return float(np.sqrt(var / n))


@dataclass
class SummaryRow:
    name: str
    est: float
    mcse: float
    lower: float
    upper: float


def summarize_samples(samples, names: Sequence[str], burn_in: int = 0) -> list[SummaryRow]:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 1 and len(names) != 1:
        samples = samples.reshape(1, -1)
    if burn_in >= samples.shape[0]:
        raise ConfigurationError(f"burn-in {burn_in} leaves no draws out of {samples.shape[0]}")
    kept = samples[burn_in:]
    rows = []
    for k, name in enumerate(names):
        col = kept[:, k]
        lo, hi = np.quantile(col, [0.025, 0.975])
        mcse = batch_means_mcse(col) if len(col) > 3 else float("nan")
        rows.append(SummaryRow(name, float(col.mean()), mcse, float(lo), float(hi)))
    return rows


def summarize_chain(chain: Chain, burn_in: int = 0) -> list[SummaryRow]:
    """Posterior mean, batch-means MCSE and equal-tailed 95% interval for
    every parameter, in table order."""
    return summarize_samples(chain.samples(), chain.names, burn_in)
