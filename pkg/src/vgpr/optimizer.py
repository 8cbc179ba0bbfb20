"""Quadratic constrained coordinate descent (QCCD) with Armijo backtracking.

Every iteration minimizes the local quadratic model

    h(theta) + g'(t - theta) + (t - theta)' H (t - theta) / 2,   t >= lower

by cyclic coordinate descent, then backtracks along the segment towards
the model minimizer.  Exact zeros are reachable because each coordinate
update is clipped at its bound.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .kernel import Hyperparameters
from .penalty import PenaltyState, penalty_grad, penalty_value, update_history
from .vecchia import MiniBatch, NotPositiveDefiniteError, sample_minibatch, vecchia_report

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    max_iter: Optional[int] = None  # 100 full batch, 200 mini-batch
    armijo_c: float = 1e-4
    beta_min: float = 2.0 ** -20
    tol_rel_obj: float = 1e-6
    tempering_window: int = 10
    batch_size: Optional[int] = None
    alpha_min: float = 2.0 ** -10
    ccd_tol: float = 1e-10
    ccd_max_sweeps: int = 500

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        for name in ("beta_min", "tol_rel_obj", "tempering_window", "alpha_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def iterations(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 200 if self.batch_size else 100


@dataclass
class OptState:
    theta: np.ndarray
    alpha: float = 1.0
    grad_prev: Optional[np.ndarray] = None
    dot_sum: float = 0.0
    iter: int = 0


def stationarity_update(state: OptState, g_new, window: int = 10) -> OptState:
    """Learning-rate tempering from the running sum of successive gradient products.

    A negative sum at the end of a window means the stochastic gradients
    keep reversing direction, so the learning rate is halved.
    """
    g_new = np.asarray(g_new, dtype=float)
    if state.grad_prev is not None:
        state.dot_sum += float(g_new @ state.grad_prev)
    state.iter += 1
    if state.iter % window == 0:
        if state.dot_sum < 0:
            state.alpha /= 2.0
        state.dot_sum = 0.0
    state.grad_prev = g_new.copy()
    return state


def ccd(theta, g, H, lower, tol: float = 1e-10, max_sweeps: int = 500) -> np.ndarray:
    """Minimize ``g'(t - theta) + (t - theta)'H(t - theta)/2`` subject to ``t >= lower``.

    Cyclic exact coordinate minimization, starting from ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    H = np.asarray(H, dtype=float)
    lower = np.asarray(lower, dtype=float)
    diag = np.diag(H)
    if not np.all(diag > 0):
        raise ValueError("quadratic model needs a positive diagonal")
    d = np.asarray(g, dtype=float) - H @ theta
    t = np.maximum(theta.copy(), lower)
    for _ in range(max_sweeps):
        change = 0.0
        for i in range(t.shape[0]):
            # H[i] @ t includes H[i, i] * t[i]; remove it to get the off-diagonal part
            rest = H[i] @ t - diag[i] * t[i]
            new = max((-d[i] - rest) / diag[i], lower[i])
            change = max(change, abs(new - t[i]))
            t[i] = new
        if change < tol * max(1.0, float(np.abs(t).max())):
            break
    return t


def regularize_fim(H) -> np.ndarray:
    """Add a small ridge proportional to each diagonal entry.

    Curvatures of different parameters can differ by many orders of
    magnitude (noise variance versus relevances), so a ridge scaled by
    the largest diagonal would swamp the weakly curved directions.
    """
    H = np.array(H, dtype=float)
    i = np.arange(H.shape[0])
    H[i, i] += 1e-8 * (1.0 + np.abs(H[i, i]))
    return H


@dataclass
class QCCDResult:
    x: np.ndarray
    objective: float
    n_iter: int
    converged: bool
    history: List[float] = field(default_factory=list)
    trace: List[dict] = field(default_factory=list)


def qccd(objective, theta0, lower, config: Optional[OptimizerConfig] = None, rng=None,
         trace_label: Optional[dict] = None) -> QCCDResult:
    """Minimize ``objective`` over ``theta >= lower``.

    ``objective`` provides ``value(x, batch)``, ``grad_fim(x, batch)``
    returning ``(g, H)`` for the minimized function, ``n_terms`` (number
    of summands available for mini-batching) and optionally
    ``accept(x)``, called after every iteration.
    """
    cfg = config or OptimizerConfig()
    lower = np.asarray(lower, dtype=float)
    x = np.maximum(np.asarray(theta0, dtype=float).copy(), lower)
    state = OptState(x)
    minibatch = bool(cfg.batch_size)
    if minibatch and rng is None:
        rng = np.random.default_rng(0)
    history, rows = [], []
    converged = False
    h_new = math.nan
    it = 0
    for it in range(1, cfg.iterations + 1):
        batch = None
        if minibatch:
            batch = sample_minibatch(objective.n_terms, min(cfg.batch_size, objective.n_terms), rng)
        h0 = objective.value(x, batch)
        g, H = objective.grad_fim(x, batch)
        H = regularize_fim(H)
        x_ccd = ccd(x, state.alpha * g, H, lower, cfg.ccd_tol, cfg.ccd_max_sweeps)
        delta = x_ccd - x
        slope = float(g @ delta)
        beta, h_new, x_new = 1.0, h0, x
        if slope < 0:
            while beta >= cfg.beta_min:
                cand = x_ccd if beta == 1.0 else np.maximum(x + beta * delta, lower)
                h_cand = objective.value(cand, batch)
                if np.isfinite(h_cand) and h_cand <= h0 + cfg.armijo_c * beta * slope:
                    x_new, h_new = cand, h_cand
                    break
                beta /= 2.0
            else:
                beta = 0.0
        else:
            beta = 0.0
        x = x_new
        state.theta = x
        if hasattr(objective, "accept"):
            objective.accept(x)
        if minibatch:
            stationarity_update(state, g, cfg.tempering_window)
        history.append(h_new)
        row = {"iter": it, "objective": h_new, "alpha": state.alpha, "beta": beta,
               "n_active": int(getattr(objective, "count_active", lambda v: 0)(x))}
        if trace_label:
            row = {**trace_label, **row}
        rows.append(row)
        if minibatch:
            if state.alpha < cfg.alpha_min:
                converged = True
                break
        elif len(history) >= 4:
            ref = history[-4]
            if abs(history[-1] - ref) <= cfg.tol_rel_obj * max(1.0, abs(ref)):
                converged = True
                break
    return QCCDResult(x, h_new, it, converged, history, rows)


class VecchiaObjective:
    """Penalized negative Vecchia log-likelihood over a subset of parameters.

    Mini-batch sums are multiplied by ``n / batch_size`` so that the
    likelihood part stays on the full-data scale relative to the penalty.
    """

    def __init__(self, ds, plan, base: Hyperparameters, keys: Sequence, penalty: Optional[PenaltyState] = None):
        self.ds = ds
        self.plan = plan
        self.base = base
        self.keys = list(keys)
        self.penalty = penalty
        self.sr_pos = [j for j, k in enumerate(self.keys) if not isinstance(k, str)]
        self.sr_index = [int(self.keys[j]) for j in self.sr_pos]
        self.n_terms = plan.n
        self.evaluations = 0

    def theta(self, x) -> Hyperparameters:
        return self.base.with_vector(self.keys, x)

    def _scale(self, batch: Optional[MiniBatch]) -> float:
        return 1.0 if batch is None else self.n_terms / batch.size

    def count_active(self, x) -> int:
        return int(np.sum(np.asarray(x)[self.sr_pos] > 0))

    def penalty_value(self, x) -> float:
        if self.penalty is None or not self.sr_pos:
            return 0.0
        return penalty_value(self.penalty, np.asarray(x)[self.sr_pos], self.sr_index)

    def value(self, x, batch=None) -> float:
        self.evaluations += 1
        try:
            ll = vecchia_report(self.ds, self.plan, self.theta(x), [], batch, order=0).loglik
        except NotPositiveDefiniteError:
            return math.inf
        return -self._scale(batch) * ll + self.penalty_value(x)

    def grad_fim(self, x, batch=None):
        rep = vecchia_report(self.ds, self.plan, self.theta(x), self.keys, batch, order=2)
        s = self._scale(batch)
        g = -s * rep.grad
        if self.penalty is not None and self.sr_pos:
            g[self.sr_pos] += penalty_grad(self.penalty, np.asarray(x)[self.sr_pos], self.sr_index)
        H = s * 0.5 * (rep.fim + rep.fim.T)
        return g, H

    def accept(self, x) -> None:
        if self.penalty is not None:
            update_history(self.penalty, np.asarray(x)[self.sr_pos], self.sr_index)


def write_trace(rows: List[dict], path) -> None:
    if not rows:
        Path(path).write_text("iter,objective,alpha,beta,n_active\n")
        return
    fields = list(rows[0].keys())
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow(row)
