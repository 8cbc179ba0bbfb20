"""Variable selection: SR-gradient screening, forward-backward steps and the penalty path."""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .data import rng_stream
from .kernel import Hyperparameters, lower_bounds, param_keys
from .optimizer import OptimizerConfig, VecchiaObjective, qccd
from .ordering import build_plan
from .penalty import PenaltyState
from .predict import predict
from .vecchia import sample_minibatch, vecchia_report

log = logging.getLogger(__name__)

SCREEN_FLOOR = 1e-8


@dataclass
class CandidateSet:
    """Selected covariates in order of entry, plus an add/remove log."""

    zeta: List[int] = field(default_factory=list)
    history: List[tuple] = field(default_factory=list)

    def add(self, idx: Sequence[int], step: int = 0) -> None:
        for l in idx:
            l = int(l)
            if l in self.zeta:
                raise ValueError(f"covariate {l} already selected")
            self.zeta.append(l)
            self.history.append(("add", l, step))

    def remove(self, idx: Sequence[int], step: int = 0) -> None:
        for l in idx:
            self.zeta.remove(int(l))
            self.history.append(("remove", int(l), step))

    def copy(self) -> "CandidateSet":
        return CandidateSet(list(self.zeta), list(self.history))

    def __len__(self) -> int:
        return len(self.zeta)


@dataclass
class PathRecord:
    lam: float
    theta: Hyperparameters
    zeta: List[int]
    oos_rmse: float
    wall_time: float
    stopping: bool = False

    @property
    def n_selected(self) -> int:
        return len(self.zeta)


@dataclass
class VGPRConfig:
    m: int = 100
    k: int = 3
    gamma: float = 0.25
    kappa: int = 0
    batch_size: Optional[int] = None
    seed: int = 0
    improve_tol: float = 0.01
    lambda_floor_ratio: float = 1e-6
    max_doublings: int = 40
    init_sigma2: float = 0.25
    init_tau2: float = 1e-4
    new_sr: float = 0.01
    max_forward_steps: Optional[int] = None
    max_iter: Optional[int] = None
    kernel_family: str = "matern25"

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("m and k must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            self.batch_size = None

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(max_iter=self.max_iter, batch_size=self.batch_size)


def restrict(theta: Hyperparameters, zeta: Sequence[int]) -> Hyperparameters:
    """Copy of ``theta`` with every relevance outside ``zeta`` set to zero."""
    out = theta.copy()
    keep = np.zeros(theta.d, dtype=bool)
    keep[list(zeta)] = True
    out.sr[~keep] = 0.0
    return out


def plan_for(ds, theta: Hyperparameters, zeta: Sequence[int], m: int):
    """Scaled plan on the selected coordinates; unit relevances when nothing is selected."""
    if len(zeta) == 0:
        return build_plan(ds.X, np.ones(ds.d), m)
    return build_plan(ds.X, restrict(theta, zeta).sr, m)


def sr_gradient(ds, plan, theta: Hyperparameters, zeta: Sequence[int], batch=None) -> np.ndarray:
    """Log-likelihood gradient for every unselected relevance, evaluated at the floor.

    Entries for selected covariates are returned as ``nan``.
    """
    others = [l for l in range(theta.d) if l not in set(zeta)]
    g = np.full(theta.d, np.nan)
    if not others:
        return g
    th = restrict(theta, zeta)
    th.sr[others] = SCREEN_FLOOR
    g[others] = vecchia_report(ds, plan, th, others, batch, order=1).grad
    return g


def sr_gradient_screen(ds, plan, theta: Hyperparameters, zeta: Sequence[int], k: int, batch=None) -> List[int]:
    """The ``k`` unselected covariates with the largest SR-gradient coefficients.

    Ties go to the lower index.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if len(zeta) + k > theta.d:
        raise ValueError(f"cannot screen {k} covariates: only {theta.d - len(zeta)} remain")
    g = sr_gradient(ds, plan, theta, zeta, batch)
    others = np.array([l for l in range(theta.d) if l not in set(zeta)], dtype=int)
    order = np.lexsort((others, -g[others]))
    return [int(l) for l in others[order[:k]]]


def oos_rmse(theta: Hyperparameters, train, oos, m: int) -> float:
    """RMSE of posterior means at the held-out rows (standardized scale)."""
    mean, _ = predict(train, theta, oos.X, m, want_variance=False)
    return float(np.sqrt(np.mean((mean - oos.y) ** 2)))


@dataclass
class FitState:
    theta: Hyperparameters
    cand: CandidateSet
    penalty: PenaltyState
    rmse: float

    def copy(self) -> "FitState":
        return FitState(self.theta.copy(), self.cand.copy(), copy.deepcopy(self.penalty), self.rmse)


def fit_selected(train, theta: Hyperparameters, zeta: Sequence[int], penalty: PenaltyState,
                 config: VGPRConfig, rng, trace: Optional[list] = None, label: Optional[dict] = None):
    """Penalized QCCD over ``sigma2``, the selected relevances and ``tau2`` (warm start)."""
    theta = restrict(theta, zeta)
    plan = plan_for(train, theta, zeta, config.m)
    keys = param_keys(zeta)
    obj = VecchiaObjective(train, plan, theta, keys, penalty)
    res = qccd(obj, theta.to_vector(keys), lower_bounds(keys), config.optimizer(), rng, label)
    if trace is not None:
        trace.extend(res.trace)
    return theta.with_vector(keys, res.x), res


def forward_backward(train, oos, theta: Hyperparameters, zeta, lam: float, k: int,
                     config: VGPRConfig, penalty: Optional[PenaltyState] = None,
                     rng=None, trace: Optional[list] = None):
    """Grow the candidate set by SR-gradient screening until the OOS score stalls.

    Each step screens ``k`` covariates, fits the penalized model on the
    enlarged set, drops covariates whose relevance reached exactly zero
    and scores the result.  When the OOS RMSE does not improve by more
    than ``config.improve_tol`` the last step is undone.

    Returns ``(theta, CandidateSet, oos_rmse, penalty_state)``.
    """
    cand = zeta.copy() if isinstance(zeta, CandidateSet) else CandidateSet(list(zeta))
    if penalty is None:
        penalty = PenaltyState(lam, config.gamma, config.kappa)
    penalty.lam = lam
    rng = rng if rng is not None else rng_stream(config.seed, "forward-backward")
    theta = restrict(theta, cand.zeta)
    best = FitState(theta, cand, penalty, oos_rmse(theta, train, oos, config.m))
    step = 0
    while len(best.cand) < theta.d:
        if config.max_forward_steps is not None and step >= config.max_forward_steps:
            break
        step += 1
        cur = best.copy()
        plan = plan_for(train, cur.theta, cur.cand.zeta, config.m)
        batch = None
        if config.batch_size:
            batch = sample_minibatch(train.n, min(config.batch_size, train.n), rng)
        k_eff = min(k, theta.d - len(cur.cand))
        new = sr_gradient_screen(train, plan, cur.theta, cur.cand.zeta, k_eff, batch)
        cur.cand.add(new, step)
        cur.theta.sr[new] = config.new_sr
        label = {"lambda": lam, "step": step}
        cur.theta, _ = fit_selected(train, cur.theta, cur.cand.zeta, cur.penalty, config, rng, trace, label)
        dropped = [l for l in cur.cand.zeta if cur.theta.sr[l] == 0.0]
        cur.cand.remove(dropped, step)
        cur.rmse = oos_rmse(cur.theta, train, oos, config.m)
        log.info("lambda=%g step=%d added=%s dropped=%s rmse=%.5f", lam, step, new, dropped, cur.rmse)
        if cur.rmse < best.rmse * (1.0 - config.improve_tol):
            best = cur
        else:
            break
    return best.theta, best.cand, best.rmse, best.penalty


def initial_theta(d: int, config: VGPRConfig) -> Hyperparameters:
    return Hyperparameters(config.init_sigma2, np.zeros(d), config.init_tau2, config.kernel_family)


def vgpr_path(train, oos, config: Optional[VGPRConfig] = None, trace: Optional[list] = None) -> List[PathRecord]:
    """Penalized selection along ``lambda = lambda0, lambda0 / 2, ...``.

    ``lambda0`` starts at ``n`` and is doubled until the fitted model is
    empty.  Every later value warm-starts from the previous fit.  The path
    stops once a non-empty model exists and a halving of ``lambda`` no
    longer improves the best OOS RMSE by more than ``config.improve_tol``,
    or when ``lambda`` drops below ``lambda_floor_ratio * n``.  The record
    with the best OOS RMSE is flagged as the stopping record.
    """
    config = config or VGPRConfig()
    n, d = train.n, train.d
    rng = rng_stream(config.seed, "vgpr")
    lam = float(n)
    records: List[PathRecord] = []
    for _ in range(config.max_doublings + 1):
        t0 = time.perf_counter()
        penalty = PenaltyState(lam, config.gamma, config.kappa)
        theta, cand, rmse, penalty = forward_backward(train, oos, initial_theta(d, config), [], lam,
                                                      config.k, config, penalty, rng, trace)
        if len(cand) == 0:
            break
        lam *= 2.0
    else:
        raise RuntimeError("could not find a penalty strength giving an empty model")
    records.append(PathRecord(lam, theta.copy(), list(cand.zeta), rmse, time.perf_counter() - t0))
    best = 0
    while True:
        lam /= 2.0
        if lam < config.lambda_floor_ratio * n:
            break
        t0 = time.perf_counter()
        theta, cand, rmse, penalty = forward_backward(train, oos, theta, cand, lam, config.k, config,
                                                      penalty, rng, trace)
        records.append(PathRecord(lam, theta.copy(), list(cand.zeta), rmse, time.perf_counter() - t0))
        ref = records[best]
        if rmse < ref.oos_rmse * (1.0 - config.improve_tol):
            best = len(records) - 1
        elif ref.n_selected > 0:
            break
    records[best].stopping = True
    return records


def stopping_record(records: List[PathRecord]) -> PathRecord:
    for r in records:
        if r.stopping:
            return r
    return records[-1]


def write_path_csv(records: List[PathRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "oos_rmse", "n_selected", "selected_indices", "sigma2", "tau2",
                    "wall_time", "stopping"])
        for r in records:
            w.writerow([repr(r.lam), repr(r.oos_rmse), r.n_selected, ";".join(str(l) for l in r.zeta),
                        repr(r.theta.sigma2), repr(r.theta.tau2), f"{r.wall_time:.3f}", int(r.stopping)])


def write_relevance_csv(records: List[PathRecord], path, columns: Optional[Sequence[str]] = None) -> None:
    d = records[0].theta.d if records else 0
    columns = list(columns) if columns is not None else [f"x{l + 1}" for l in range(d)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", *columns])
        for r in records:
            w.writerow([repr(r.lam), *[repr(float(v)) for v in r.theta.sr]])
