"""Exact forward filtering of the regime chain given a log-vol trajectory.

The batched helpers :func:`hmm_update` and :func:`hmm_pass` work on any
leading shape of beliefs so the particle filter can run every particle (and
every replica) in one call; :func:`hmm_init` and :func:`hmm_step` are the
single-belief versions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import FilterDegeneracyError
from .model import MslParams, obs_logdensity
from .regimes import RegimeTransition, SelectorSpace

__all__ = [
    "RegimeBelief",
    "hmm_update",
    "hmm_init",
    "hmm_step",
    "hmm_pass",
    "regime_predictive",
]


@dataclass(frozen=True)
class RegimeBelief:
    """Filtered regime probabilities plus the log normalizer of the step
    that produced them."""

    probs: np.ndarray
    log_norm: float = 0.0

    @property
    def panic_probability(self) -> float:
        return float(1.0 - self.probs[0])


def hmm_update(pred: np.ndarray, logdens: np.ndarray):
    """Bayes update of predictive regime probabilities.

    Parameters
    ----------
    pred : (..., S) predictive probabilities.
    logdens : (..., S) log observation densities per regime.

    Returns
    -------
    post : (..., S) posterior probabilities.  Rows whose likelihood is zero
        keep their predictive probabilities.
    loglik : (...) log of the normalizer, ``-inf`` for such rows.
    """
    m = np.max(logdens, axis=-1, keepdims=True)
    finite = np.isfinite(m)
    shifted = np.where(finite, logdens - np.where(finite, m, 0.0), -np.inf)
    w = pred * np.exp(shifted)
    z = w.sum(axis=-1, keepdims=True)
    ok = finite & (z > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        post = np.where(ok, w / np.where(ok, z, 1.0), pred)
        loglik = np.where(ok, m + np.log(np.where(ok, z, 1.0)), -np.inf)
    return post, loglik[..., 0]


def _check(loglik, step):
    if not np.isfinite(loglik):
        raise FilterDegeneracyError(step, f"observation has zero density under every regime at step {step}")


def hmm_init(space: SelectorSpace, trans: RegimeTransition, theta: MslParams, logvol, y):
    """Condition the uniform initial regime law on the first observation.

    Returns ``(RegimeBelief, cond_loglik)``; ``trans`` is accepted for
    symmetry with :func:`hmm_step` and only checked for size.
    """
    if trans.S_K != space.S_K:
        raise ValueError("transition kernel and selector space disagree on S_K")
    prior = np.full(space.S_K, 1.0 / space.S_K)
    logdens = obs_logdensity(theta, space.masks, np.asarray(logvol, dtype=float), y)
    post, loglik = hmm_update(prior, logdens)
    _check(loglik, 1)
    return RegimeBelief(post, float(loglik)), float(loglik)


def hmm_step(belief: RegimeBelief, trans: RegimeTransition, theta: MslParams, logvol, y,
             space: SelectorSpace | None = None, step: int | None = None):
    """Predict one step with ``trans`` then condition on ``y``.

    ``space`` defaults to the full selector space for ``theta`` and
    ``trans.S_K`` is used to recover ``K`` when it is omitted.
    """
    if space is None:
        space = _space_for(theta.d_y, trans.S_K)
    pred = trans.predict(belief.probs)
    logdens = obs_logdensity(theta, space.masks, np.asarray(logvol, dtype=float), y)
    post, loglik = hmm_update(pred, logdens)
    _check(loglik, step if step is not None else "?")
    return RegimeBelief(post, float(loglik)), float(loglik)


def _space_for(d_y: int, S_K: int) -> SelectorSpace:
    from math import comb

    from .regimes import enumerate_selectors

    total = 0
    for K in range(d_y):
        total += comb(d_y, K)
        if total == S_K:
            return enumerate_selectors(d_y, K)
    raise ValueError(f"no K gives S_K={S_K} for d_y={d_y}")


def regime_predictive(belief, trans: RegimeTransition) -> np.ndarray:
    """``Pi^T probs`` for a :class:`RegimeBelief` or raw probability array."""
    probs = belief.probs if isinstance(belief, RegimeBelief) else belief
    return trans.predict(probs)


def hmm_pass(space: SelectorSpace, theta: MslParams, logvol_path, y) -> float:
    """Exact log-likelihood of ``y[0:T]`` given a full log-vol path."""
    logvol_path = np.atleast_2d(np.asarray(logvol_path, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    trans = theta.transition(space.S_K)
    belief, total = hmm_init(space, trans, theta, logvol_path[0], y[0])
    for t in range(1, len(y)):
        belief, ll = hmm_step(belief, trans, theta, logvol_path[t], y[t], space=space, step=t + 1)
        total += ll
    return total
