"""Dense exact-GP reference computations and the KL accuracy benchmark."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
import scipy.linalg as spl
import scipy.sparse as sp

from .data import DENSE_SAMPLING_LIMIT, SimulationSpec, simulate
from .kernel import Hyperparameters, covariance_block, covariance_block_grad
from .ordering import VecchiaPlan, build_plan
from .vecchia import JITTER, NotPositiveDefiniteError, conditional_coefficients

DENSE_LIMIT = DENSE_SAMPLING_LIMIT


def _guard(n):
    if n > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to n <= {DENSE_LIMIT}, got n={n}")


def dense_cholesky(S: np.ndarray, sigma2: float = 1.0) -> np.ndarray:
    """Lower Cholesky factor, retrying once with ``1e-10 * sigma2`` jitter."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(S + JITTER * max(sigma2, 1e-300) * np.eye(S.shape[0]))
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("covariance not positive definite after jitter") from None


def dense_covariance(ds, theta: Hyperparameters) -> np.ndarray:
    X = np.asarray(getattr(ds, "X", ds), dtype=float)
    idx = np.arange(X.shape[0])
    return covariance_block(idx, idx, X, theta, add_noise=True)


def dense_loglik(ds, theta: Hyperparameters) -> float:
    """Exact log N(y | 0, Sigma_theta)."""
    _guard(ds.X.shape[0])
    L = dense_cholesky(dense_covariance(ds, theta), theta.sigma2)
    alpha = spl.solve_triangular(L, ds.y, lower=True)
    n = ds.y.shape[0]
    return float(-0.5 * alpha @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))


def dense_grad_fim(ds, theta: Hyperparameters, keys: Sequence):
    """Exact score and Fisher information via the trace formulas.

    ``g_j = y'S^-1 S_j S^-1 y / 2 - tr(S^-1 S_j) / 2`` and
    ``F_jk = tr(S^-1 S_j S^-1 S_k) / 2``.
    """
    _guard(ds.X.shape[0])
    n = ds.X.shape[0]
    idx = np.arange(n)
    S = dense_covariance(ds, theta)
    Sinv = np.linalg.inv(S)
    alpha = Sinv @ ds.y
    W = [Sinv @ covariance_block_grad(idx, idx, ds, theta, k) for k in keys]
    g = np.array([0.5 * alpha @ covariance_block_grad(idx, idx, ds, theta, k) @ alpha - 0.5 * np.trace(Wk)
                  for k, Wk in zip(keys, W)])
    F = np.array([[0.5 * np.sum(Wj * Wk.T) for Wk in W] for Wj in W])
    return g, F


def vecchia_implied_precision_factor(plan: VecchiaPlan, ds, theta: Hyperparameters) -> sp.csc_matrix:
    """Sparse upper-triangular ``U`` with ``inv(Sigma_hat) = U U'`` in plan order.

    Column ``i`` has ``1 / sqrt(v_i)`` on the diagonal and
    ``-b_i / sqrt(v_i)`` at the rows of its conditioning set.
    """
    coef, var = conditional_coefficients(ds, plan, theta)
    n = plan.n
    rows, cols, vals = [], [], []
    sd_inv = 1.0 / np.sqrt(var)
    for i in range(n):
        k = plan.sizes[i]
        rows.append(np.concatenate([plan.cond[i, :k], [i]]))
        cols.append(np.full(k + 1, i))
        vals.append(np.concatenate([-coef[i, :k] * sd_inv[i], [sd_inv[i]]]))
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def gaussian_kl(sigma0: np.ndarray, other) -> float:
    """KL( N(0, sigma0) || N(0, sigma1) ).

    ``other`` is either the dense covariance ``sigma1`` or a sparse
    upper-triangular factor ``U`` of ``inv(sigma1) = U U'``.
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    n = sigma0.shape[0]
    if sigma0.shape != (n, n) or other.shape != (n, n):
        raise ValueError("dimension mismatch")
    try:
        L0 = np.linalg.cholesky(sigma0)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("sigma0 is not positive definite") from None
    logdet0 = 2.0 * np.log(np.diag(L0)).sum()
    if sp.issparse(other):
        U = sp.csc_matrix(other)
        diag = U.diagonal()
        if np.any(diag <= 0):
            raise NotPositiveDefiniteError("factor has nonpositive diagonal")
        logdet1 = -2.0 * np.log(diag).sum()
        M = U.T @ L0
        trace = float(np.sum(M * M))
    else:
        try:
            L1 = np.linalg.cholesky(np.asarray(other, dtype=float))
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError("sigma1 is not positive definite") from None
        logdet1 = 2.0 * np.log(np.diag(L1)).sum()
        M = spl.solve_triangular(L1, L0, lower=True)
        trace = float(np.sum(M * M))
    return 0.5 * (trace - n + logdet1 - logdet0)


def figure1_spec(n: int = 1000, d: int = 10, seed: int = 0) -> SimulationSpec:
    """sigma2 = 1, r = (10, 5, 2, 1, 0.5, 0, ...), tau2 = 0, LHS covariates."""
    sr = np.zeros(d)
    head = np.array([10.0, 5.0, 2.0, 1.0, 0.5]) ** 2
    sr[: min(5, d)] = head[: min(5, d)]
    return SimulationSpec(n, d, Hyperparameters(1.0, sr, 0.0), "lhs", 0.0, seed)


def benchmark_kl(spec: SimulationSpec, m_list: Iterable[int],
                 strategies: Sequence[str] = ("fic", "unscaled-nn", "scaled-nn"),
                 reps: int = 1) -> List[dict]:
    """KL divergence of Vecchia-type approximations from the exact GP.

    Each replicate draws fresh covariates (seed ``spec.seed + r``) and
    evaluates every ``(strategy, m)`` pair at the true parameters.
    """
    _guard(spec.n)
    theta = spec.theta_true
    rows = []
    for r in range(reps):
        X = simulate(SimulationSpec(spec.n, spec.d, theta, spec.covariate_mode, spec.rho,
                                    spec.seed + r)).X
        S = dense_covariance(X, theta)
        for strategy in strategies:
            for m in m_list:
                m_eff = min(int(m), spec.n - 1)
                plan = build_plan(X, theta, m_eff, strategy)
                U = vecchia_implied_precision_factor(plan, X, theta)
                S0 = S[np.ix_(plan.perm, plan.perm)]
                rows.append({"strategy": strategy, "m": m_eff, "replicate": r,
                             "kl": gaussian_kl(S0, U)})
    return rows


def write_kl_csv(rows: List[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["strategy", "m", "replicate", "kl"])
        w.writeheader()
        for row in rows:
            w.writerow({**row, "kl": repr(float(row["kl"]))})


def summarize_kl(rows: List[dict]) -> dict:
    """Mean KL per ``(strategy, m)``."""
    acc = {}
    for row in rows:
        acc.setdefault((row["strategy"], row["m"]), []).append(row["kl"])
    return {key: float(np.mean(v)) for key, v in acc.items()}
