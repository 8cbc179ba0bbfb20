"""Bridge penalty on squared relevances, with iterative adaptive weights.

    w(sr) = lam * sum_l (c_l + sr_l) ** gamma

where ``c_l`` is the sum of ``sr_l`` over the last ``kappa`` accepted
iterates (``kappa = 0`` gives the classic bridge penalty).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Optional, Sequence

import numpy as np

GRAD_CAP = 1e12
EMPTY_HISTORY_FLOOR = 1e-8


@dataclass
class PenaltyState:
    lam: float
    gamma: float = 0.25
    kappa: int = 0
    history: Deque[Dict[int, float]] = field(default_factory=deque)
    iter: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        self.history = deque(self.history, maxlen=self.kappa or None)
        if self.kappa == 0:
            self.history.clear()

    def adaptive_offset(self, index: Sequence[int]) -> np.ndarray:
        """``c_l`` for each covariate in ``index``."""
        index = [int(l) for l in index]
        if self.kappa == 0:
            return np.zeros(len(index))
        if not self.history:
            return np.full(len(index), EMPTY_HISTORY_FLOOR)
        return np.array([sum(h.get(l, 0.0) for h in self.history) for l in index])


def _index(sr, index):
    sr = np.asarray(sr, dtype=float).reshape(-1)
    if np.any(sr < 0):
        raise ValueError("squared relevances must be nonnegative")
    if index is None:
        index = range(sr.shape[0])
    index = list(index)
    if len(index) != sr.shape[0]:
        raise ValueError("index and sr lengths differ")
    return sr, index


def penalty_value(state: PenaltyState, sr, index: Optional[Sequence[int]] = None) -> float:
    """Penalty of the squared relevances ``sr`` (covariate ids in ``index``)."""
    sr, index = _index(sr, index)
    if state.lam == 0:
        return 0.0
    c = state.adaptive_offset(index)
    return float(state.lam * np.sum((c + sr) ** state.gamma))


def penalty_grad(state: PenaltyState, sr, index: Optional[Sequence[int]] = None,
                 return_capped: bool = False):
    """Derivative of :func:`penalty_value` with respect to each ``sr_l``.

    Where ``c_l + sr_l == 0`` the derivative is infinite; ``GRAD_CAP`` is
    returned instead and flagged in the optional mask.
    """
    sr, index = _index(sr, index)
    capped = np.zeros(sr.shape[0], dtype=bool)
    if state.lam == 0:
        g = np.zeros(sr.shape[0])
    else:
        base = state.adaptive_offset(index) + sr
        capped = base <= 0
        g = np.full(sr.shape[0], GRAD_CAP)
        ok = ~capped
        g[ok] = state.lam * state.gamma * base[ok] ** (state.gamma - 1.0)
        if state.gamma == 1.0:
            g[capped] = state.lam
            capped[:] = False
    return (g, capped) if return_capped else g


def update_history(state: PenaltyState, sr_accepted, index: Optional[Sequence[int]] = None) -> PenaltyState:
    """Record an accepted iterate and advance the iteration counter."""
    sr, index = _index(sr_accepted, index)
    if state.kappa > 0:
        state.history.append({l: float(v) for l, v in zip(index, sr)})
    state.iter += 1
    return state
