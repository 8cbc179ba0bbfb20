"""Maximin ordering and conditioning sets under the scaled distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

STRATEGIES = ("scaled-nn", "unscaled-nn", "fic")


@dataclass(frozen=True)
class VecchiaPlan:
    """Ordering plus conditioning sets.

    ``perm[i]`` is the original row placed at position ``i``.  Row ``i`` of
    ``cond`` lists the conditioning positions of position ``i`` (nearest
    first), padded with ``-1``; ``sizes[i] == min(i, m)``.
    """

    perm: np.ndarray
    cond: np.ndarray
    sizes: np.ndarray
    m: int
    sr_used: np.ndarray
    strategy: str = "scaled-nn"

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    def conditioning_sets(self) -> List[np.ndarray]:
        return [self.cond[i, : self.sizes[i]].copy() for i in range(self.n)]


def _scaled_coords(X, sr):
    X = np.asarray(getattr(X, "X", X), dtype=float)
    sr = np.asarray(sr, dtype=float)
    if sr.shape != (X.shape[1],):
        raise ValueError(f"sr has shape {sr.shape}, expected ({X.shape[1]},)")
    if np.any(sr < 0):
        raise ValueError("squared relevances must be nonnegative")
    cols = np.flatnonzero(sr > 0)
    if cols.size == 0:
        return np.zeros((X.shape[0], 1))
    # normalizing by the largest entry makes plans for sr and c * sr agree
    w = np.sqrt(sr[cols] / sr[cols].max())
    return X[:, cols] * w


def maxmin_order(X, sr) -> np.ndarray:
    """Exact greedy maximin ordering, O(n^2).

    Starts from the point closest to the centroid of the scaled
    coordinates; every later point maximizes its minimum distance to the
    points already ordered.  Ties go to the lowest original index.
    """
    Z = _scaled_coords(X, sr)
    n = Z.shape[0]
    first = int(np.argmin(((Z - Z.mean(axis=0)) ** 2).sum(axis=1)))
    order = np.empty(n, dtype=int)
    order[0] = first
    mind = ((Z - Z[first]) ** 2).sum(axis=1)
    mind[first] = -1.0
    for t in range(1, n):
        j = int(np.argmax(mind))
        order[t] = j
        np.minimum(mind, ((Z - Z[j]) ** 2).sum(axis=1), out=mind)
        mind[j] = -1.0
    return order


def _k_smallest(dist, k):
    """Positions of the k smallest entries, ties to the lower position, nearest first."""
    if k >= dist.shape[0]:
        sel = np.arange(dist.shape[0])
    else:
        kth = np.partition(dist, k - 1)[k - 1]
        below = np.flatnonzero(dist < kth)
        ties = np.flatnonzero(dist == kth)[: k - below.size]
        sel = np.concatenate([below, ties])
    return sel[np.lexsort((sel, dist[sel]))]


def nn_conditioning(X, perm, sr, m: int):
    """Nearest previously-ordered neighbours of every position.

    Returns ``(cond, sizes)`` with ``cond`` an (n, m_eff) array padded
    with -1, ``m_eff = min(m, n - 1)``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    Z = _scaled_coords(X, sr)[np.asarray(perm, dtype=int)]
    n = Z.shape[0]
    m_eff = max(min(m, n - 1), 0)
    cond = np.full((n, m_eff), -1, dtype=int)
    sizes = np.minimum(np.arange(n), m_eff)
    for i in range(1, n):
        dist = ((Z[:i] - Z[i]) ** 2).sum(axis=1)
        cond[i, : sizes[i]] = _k_smallest(dist, m_eff)
    return cond, sizes


def fic_conditioning(n: int, m: int):
    """Every position conditions on (at most) the first ``m`` positions."""
    if m < 1:
        raise ValueError("m must be at least 1")
    m_eff = max(min(m, n - 1), 0)
    sizes = np.minimum(np.arange(n), m_eff)
    cond = np.full((n, m_eff), -1, dtype=int)
    for i in range(1, n):
        cond[i, : sizes[i]] = np.arange(sizes[i])
    return cond, sizes


def build_plan(X, theta, m: int, strategy: str = "scaled-nn") -> VecchiaPlan:
    """Ordering and conditioning for a dataset.

    ``theta`` may be a :class:`~vgpr.kernel.Hyperparameters` or a plain
    squared-relevance vector.  ``unscaled-nn`` ignores it and uses unit
    relevances; ``fic`` orders by scaled maximin and conditions every
    response on the first ``m`` ordered points.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    X = np.asarray(getattr(X, "X", X), dtype=float)
    sr = np.asarray(getattr(theta, "sr", theta), dtype=float)
    if strategy == "unscaled-nn":
        sr = np.ones(X.shape[1])
    perm = maxmin_order(X, sr)
    if strategy == "fic":
        cond, sizes = fic_conditioning(X.shape[0], m)
    else:
        cond, sizes = nn_conditioning(X, perm, sr, m)
    return VecchiaPlan(perm, cond, sizes, int(m), sr.copy(), strategy)
