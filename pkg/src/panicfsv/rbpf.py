"""Rao-Blackwellized bootstrap particle filter and a plain SISR reference.

Particles carry a sampled log-vol vector and an exact regime belief.  The
engine runs ``R`` independent replicas side by side in one vectorized
pass; each replica owns its own random generator, so a replica's output
depends only on its seed and not on which other replicas share the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigurationError, FilterDegeneracyError
from .hmm import hmm_update
from .model import MslParams, ObsDensity, obs_logdensity
from .regimes import SelectorSpace

__all__ = [
    "ParticleCloud",
    "FilterOutput",
    "BootstrapProposal",
    "rbpf_run",
    "rbpf_loglik",
    "filtered_expectation",
    "sisr_run",
    "multinomial_resample",
]


@dataclass
class ParticleCloud:
    """Weighted particles at one time step, before resampling.

    Attributes
    ----------
    logvols : (n, 2 d_f) sampled log-vols.
    beliefs : (n, S_K) filtered regime probabilities per particle.
    log_weights : (n,) normalized log weights.
    """

    logvols: np.ndarray
    beliefs: np.ndarray
    log_weights: np.ndarray

    @property
    def n(self) -> int:
        return self.logvols.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))


@dataclass
class FilterOutput:
    """Per-step summaries of one filter pass.

    ``extras`` maps each hook name to the list of values it returned, one
    per time step.
    """

    loglik_increments: np.ndarray
    panic_prob: np.ndarray
    ess: np.ndarray
    extras: dict = field(default_factory=dict)
    final_cloud: ParticleCloud | None = None

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_increments))

    @property
    def T(self) -> int:
        return len(self.loglik_increments)


class BootstrapProposal:
    """Propose from the log-vol dynamics, so the weight correction is zero.

    A custom proposal implements the same two methods and returns the log of
    ``transition density / proposal density`` as the correction term.
    """

    def initial(self, theta: MslParams, rng: np.random.Generator, n: int):
        sd = np.sqrt(theta.stationary_var)
        x = theta.mu + sd * rng.standard_normal((n, theta.mu.size))
        return x, np.zeros(n)

    def step(self, theta: MslParams, prev: np.ndarray, rng: np.random.Generator, y_t=None):
        sd = np.sqrt(theta.q)
        x = theta.mu + theta.phi * (prev - theta.mu) + sd * rng.standard_normal(prev.shape)
        return x, np.zeros(prev.shape[0])


def multinomial_resample(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` iid ancestor indices from normalized log weights."""
    w = np.exp(log_weights - log_weights.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.random(len(w))
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(w) - 1)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp without scipy's per-call overhead (hot loop)."""
    m = a.max(axis=-1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - safe[..., None]).sum(axis=-1)) + safe


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _run_batch(theta, space, y, n, rngs, proposal, resample, ess_threshold, on_step, strict):
    """Shared engine.  Returns per-replica increments of shape (R, T)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T = y.shape[0]
    R = len(rngs)
    if n < 1:
        raise ConfigurationError("need at least one particle")
    if y.shape[1] != theta.d_y or space.d_y != theta.d_y:
        raise ConfigurationError("data, selector space and parameters disagree on d_y")
    if resample not in ("always", "ess"):
        raise ConfigurationError(f"unknown resampling mode {resample!r}")
    trans = theta.transition(space.S_K)
    density = ObsDensity(theta, space.masks, y)
    proposal = proposal or BootstrapProposal()

    increments = np.empty((R, T))
    log_n = np.log(n)
    prev_logw = np.full((R, n), -log_n)
    x = None
    beliefs = np.full((R, n, space.S_K), 1.0 / space.S_K)
    dead = np.zeros(R, dtype=bool)
    for t in range(T):
        draws = [
            proposal.initial(theta, rng, n) if t == 0 else proposal.step(theta, x[r], rng, y[t])
            for r, rng in enumerate(rngs)
        ]
        x = np.stack([d[0] for d in draws])
        corr = np.stack([d[1] for d in draws])
        pred = beliefs if t == 0 else trans.predict(beliefs)
        logdens = density(t, x)
        post, ll = hmm_update(pred, logdens)
        logw = prev_logw + ll + corr
        inc = _logsumexp_rows(logw)
        newly_dead = ~np.isfinite(inc) & ~dead
        if newly_dead.any():
            if strict:
                raise FilterDegeneracyError(t + 1)
            dead |= newly_dead
        increments[:, t] = np.where(dead, -np.inf, inc)
        logw = np.where(dead[:, None], -log_n, logw - np.where(dead, 0.0, inc)[:, None])
        if on_step is not None:
            on_step(t, x, post, logw)
        w = np.exp(logw)
        ess = 1.0 / np.sum(w * w, axis=-1)
        for r, rng in enumerate(rngs):
            if resample == "always" or ess[r] < ess_threshold * n:
                a = multinomial_resample(logw[r], rng)
                x[r] = x[r][a]
                post[r] = post[r][a]
                logw[r] = -log_n
        prev_logw = logw
        beliefs = post
    return increments


def rbpf_run(theta: MslParams, space: SelectorSpace, y, n_particles: int, seed=None,
             hooks: Mapping[str, Callable] | None = None, proposal=None,
             resample: str = "always", ess_threshold: float = 0.5) -> FilterOutput:
    """Run one Rao-Blackwellized filter through ``y``.

    Parameters
    ----------
    hooks : mapping of name to ``hook(t, cloud)``
        Called at every step with the weighted cloud *before* resampling;
        ``t`` is 0-based.  Return values are collected in
        ``FilterOutput.extras[name]``.
    resample : {"always", "ess"}
        ``"always"`` resamples multinomially at every step.  ``"ess"`` only
        resamples when the effective sample size drops below
        ``ess_threshold * n_particles``.

    Raises
    ------
    FilterDegeneracyError
        If every particle has zero weight at some step.
    """
    hooks = dict(hooks or {})
    T = np.atleast_2d(y).shape[0]
    panic = np.empty(T)
    ess = np.empty(T)
    extras = {name: [] for name in hooks}
    last = {}

    def on_step(t, x, post, logw):
        cloud = ParticleCloud(x[0].copy(), post[0].copy(), logw[0].copy())
        w = cloud.weights
        panic[t] = float(np.clip(np.dot(w, 1.0 - cloud.beliefs[:, 0]), 0.0, 1.0))
        ess[t] = 1.0 / np.sum(w * w)
        for name, hook in hooks.items():
            extras[name].append(hook(t, cloud))
        last["cloud"] = cloud

    inc = _run_batch(theta, space, y, n_particles, [_as_rng(seed)], proposal,
                     resample, ess_threshold, on_step, strict=True)
    return FilterOutput(inc[0], panic, ess, extras, last.get("cloud"))


def rbpf_loglik(theta: MslParams, space: SelectorSpace, y, n_particles: int, seeds,
                proposal=None) -> np.ndarray:
    """Log-likelihood estimates from independent replicas, one per seed.

    Replicas whose weights all vanish return ``-inf`` instead of raising.
    """
    rngs = [_as_rng(s) for s in seeds]
    inc = _run_batch(theta, space, y, n_particles, rngs, proposal, "always", 0.5, None, strict=False)
    return inc.sum(axis=1)


def filtered_expectation(cloud: ParticleCloud, h: Callable):
    """Estimate ``E[h(x1, x2) | y_1:t]`` from a weighted cloud.

    ``h(logvols)`` receives the ``(n, 2 d_f)`` log-vols and returns an array
    of shape ``(n, S_K, ...)`` holding ``h`` for every regime; the regime
    expectation is taken exactly with each particle's belief.
    """
    vals = np.asarray(h(cloud.logvols), dtype=float)
    if vals.shape[:2] != cloud.beliefs.shape:
        raise ValueError(f"h must return shape (n, S_K, ...), got {vals.shape}")
    inner = np.einsum("is,is...->i...", cloud.beliefs, vals)
    return np.tensordot(cloud.weights, inner, axes=(0, 0))


def sisr_run(theta: MslParams, space: SelectorSpace, y, n_particles: int, seed=None) -> FilterOutput:
    """Bootstrap SISR that samples regimes as well as log-vols.

    Resamples multinomially at every step.  Only meant as a reference for
    the variance reduction of :func:`rbpf_run`.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rng = _as_rng(seed)
    T, n, S = y.shape[0], n_particles, space.S_K
    trans = theta.transition(S)
    prop = BootstrapProposal()
    masks = space.masks
    inc = np.empty(T)
    panic = np.empty(T)
    ess = np.empty(T)
    prev_logw = np.full(n, -np.log(n))
    x = regimes = None
    for t in range(T):
        if t == 0:
            regimes = rng.integers(S, size=n)
            x, _ = prop.initial(theta, rng, n)
        else:
            if S > 1:
                move = rng.random(n) >= trans.p
                jump = rng.integers(S - 1, size=n)
                regimes = np.where(move, jump + (jump >= regimes), regimes)
            x, _ = prop.step(theta, x, rng)
        ll = obs_logdensity(theta, masks, x, y[t])[np.arange(n), regimes]
        logw = prev_logw + ll
        inc[t] = logsumexp(logw)
        if not np.isfinite(inc[t]):
            raise FilterDegeneracyError(t + 1)
        logw = logw - inc[t]
        w = np.exp(logw)
        panic[t] = float(np.dot(w, regimes != 0))
        ess[t] = 1.0 / np.sum(w * w)
        a = multinomial_resample(logw, rng)
        x, regimes = x[a], regimes[a]
        prev_logw = np.full(n, -np.log(n))
    return FilterOutput(inc, panic, ess)
