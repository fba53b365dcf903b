"""Contained-panic regime state space and its single-parameter transition kernel.

Regimes are labelled ``1..S_K`` in every public function; the i-th label maps
to the i-th selector diagonal in lexicographic order, so regime 1 is always
the all-zeros (no panic) diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .exceptions import ConfigurationError, ParameterDomainError

__all__ = [
    "SelectorSpace",
    "RegimeTransition",
    "enumerate_selectors",
    "selector_matrix",
    "transition_row",
]


@dataclass(frozen=True)
class SelectorSpace:
    """Ordered set of admissible selector diagonals.

    Attributes
    ----------
    d_y : int
        Number of assets.
    K : int
        Largest panic set allowed.
    diagonals : ndarray of shape (S_K, d_y), dtype uint8
        Row ``r - 1`` is the diagonal of the selector for regime ``r``.
    """

    d_y: int
    K: int
    diagonals: np.ndarray = field(repr=False)

    @property
    def S_K(self) -> int:
        return self.diagonals.shape[0]

    @property
    def masks(self) -> np.ndarray:
        """Float view of the diagonals, handy for row masking of ``B``."""
        return self.diagonals.astype(float)

    def selector_matrix(self, regime: int) -> np.ndarray:
        return selector_matrix(self, regime)

    def to_table(self) -> str:
        """Plain text ``index<TAB>bits`` listing, one regime per line."""
        lines = ["regime\tdiagonal"]
        for r, row in enumerate(self.diagonals, start=1):
            lines.append(f"{r}\t{''.join(str(int(b)) for b in row)}")
        return "\n".join(lines) + "\n"


def enumerate_selectors(d_y: int, K: int) -> SelectorSpace:
    """Enumerate every subset of at most ``K`` of the ``d_y`` assets.

    The diagonals come back sorted lexicographically as bit strings, which
    puts the empty subset first.
    """
    if int(d_y) != d_y or d_y <= 0:
        raise ConfigurationError(f"d_y must be a positive integer, got {d_y!r}")
    if int(K) != K or K < 0 or K >= d_y:
        raise ConfigurationError(
            f"K must satisfy 0 <= K < d_y for a contained panic (d_y={d_y}, K={K})"
        )
    d_y, K = int(d_y), int(K)
    n_states = sum(comb(d_y, k) for k in range(K + 1))
    rows = np.zeros((n_states, d_y), dtype=np.uint8)
    i = 0
    for k in range(K + 1):
        for subset in combinations(range(d_y), k):
            rows[i, list(subset)] = 1
            i += 1
    # lexicographic order of the bit strings == numeric order of the binary value
    weights = 1 << np.arange(d_y - 1, -1, -1, dtype=object)
    keys = [int(np.dot(r.astype(object), weights)) for r in rows]
    rows = rows[np.argsort(keys, kind="stable")]
    rows.setflags(write=False)
    return SelectorSpace(d_y=d_y, K=K, diagonals=rows)


def selector_matrix(space: SelectorSpace, regime: int) -> np.ndarray:
    """Dense ``d_y x d_y`` selector ``D(regime)`` for a 1-based regime label."""
    if not 1 <= regime <= space.S_K:
        raise IndexError(f"regime {regime} outside 1..{space.S_K}")
    return np.diag(space.diagonals[regime - 1].astype(float))


@dataclass(frozen=True)
class RegimeTransition:
    """Symmetric kernel that stays put with probability ``p`` and otherwise
    jumps uniformly to one of the other ``S_K - 1`` regimes."""

    p: float
    S_K: int

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ParameterDomainError(f"persistence p must lie in (0, 1), got {self.p}")
        if self.S_K < 1:
            raise ConfigurationError(f"S_K must be positive, got {self.S_K}")

    @property
    def off_diagonal(self) -> float:
        if self.S_K == 1:
            return 0.0
        return (1.0 - self.p) / (self.S_K - 1)

    def matrix(self) -> np.ndarray:
        if self.S_K == 1:
            return np.ones((1, 1))
        m = np.full((self.S_K, self.S_K), self.off_diagonal)
        np.fill_diagonal(m, self.p)
        return m

    def predict(self, probs: np.ndarray) -> np.ndarray:
        """One-step predictive ``Pi^T probs`` along the last axis.

        Uses the rank-one structure of the kernel so the cost is linear in
        ``S_K``.
        """
        probs = np.asarray(probs, dtype=float)
        if self.S_K == 1:
            return probs.copy()
        total = probs.sum(axis=-1, keepdims=True)
        return self.p * probs + self.off_diagonal * (total - probs)


def transition_row(trans: RegimeTransition, from_regime: int) -> np.ndarray:
    """Row ``from_regime`` (1-based) of the transition matrix."""
    if not 1 <= from_regime <= trans.S_K:
        raise IndexError(f"regime {from_regime} outside 1..{trans.S_K}")
    if trans.S_K == 1:
        return np.ones(1)
    row = np.full(trans.S_K, trans.off_diagonal)
    row[from_regime - 1] = trans.p
    return row
