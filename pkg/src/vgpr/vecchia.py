"""Vecchia log-likelihood, score and Fisher information.

Each summand is the Gaussian conditional ``y_i | y_c(i) ~ N(b'y_c, v)``
with ``b = B^{-1} a`` and ``v = A_ii - a'B^{-1}a`` (``B``: conditioning
block, ``a``: cross-covariances).  Differentiating ``b`` and ``v``
directly gives the score and the Fisher information of every term in
``O(m^3 + p m^2 + p^2 m)``:

    v_j   = A_ii,j - 2 a_j'b + b'B_j b
    b_j   = B^{-1} (a_j - B_j b)
    score = -v_j / (2v) + e b_j'y_c / v + e^2 v_j / (2 v^2),   e = y_i - b'y_c
    F_jk  = v_j v_k / (2 v^2) + b_j'B b_k / v

This equals the difference of the joint-block and conditioning-block
Gaussian scores and Fisher matrices.  Terms sharing a conditioning-set
size are evaluated together as stacked arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._numeric import lower_solve, sq_dist_stack, upper_solve_t, weighted_sqdiff_matvec
from .kernel import Hyperparameters, ParamKey, correlation, correlation_du
from .ordering import VecchiaPlan

LOG_2PI = math.log(2.0 * math.pi)
JITTER = 1e-10
_CHUNK_ELEMS = 2_000_000


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A conditioning block stayed indefinite after the jitter retry."""


@dataclass(frozen=True)
class MiniBatch:
    """Sorted subset of plan positions drawn without replacement."""

    indices: np.ndarray
    n: int

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


def sample_minibatch(n: int, size: int, rng) -> MiniBatch:
    """Uniform subset of ``size`` positions out of ``n``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not 1 <= size <= n:
        raise ValueError(f"batch size must lie in [1, {n}], got {size}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if size == n:
        return MiniBatch(np.arange(n), n)
    return MiniBatch(np.sort(rng.choice(n, size=size, replace=False)), n)


@dataclass
class LikelihoodReport:
    loglik: float
    grad: Optional[np.ndarray]
    fim: Optional[np.ndarray]
    keys: list


def default_keys(d: int) -> list:
    return ["sigma2", *range(d), "tau2"]


def conditional_moments(Xc, xi, wc, yi, theta: Hyperparameters, keys: Sequence[ParamKey] = (),
                        Dc=None, di=None, order: int = 0):
    """Conditional moments and derivatives for a stack of terms.

    Parameters
    ----------
    Xc : array (T, k, d)
        Covariates of the conditioning points (all kernel columns).
    xi : array (T, d)
        Covariates of the response being conditioned.
    wc : array (T, k)
        Conditioning responses.
    yi : array (T,)
        Responses (may be ``None`` when ``order == 0`` and only the
        moments are wanted).
    keys : parameter keys to differentiate; integer keys index the
        columns of ``Dc``/``di``.
    Dc, di : raw covariate columns used for ``sr`` derivatives,
        shapes (T, k, p_sr) and (T, p_sr), in the order the integer keys
        appear in ``keys``.
    order : 0 moments and log-density, 1 adds the score, 2 adds the
        Fisher information.

    Returns
    -------
    dict with ``mean``, ``var``, ``coef`` and (if ``yi`` given) ``ll``;
    ``grad`` (T, p) for ``order >= 1`` and ``fim`` (T, p, p) for
    ``order >= 2``.
    """
    for jitter in (0.0, JITTER * max(theta.sigma2, 1e-300)):
        try:
            return _moments(Xc, xi, wc, yi, theta, keys, Dc, di, order, jitter)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError("conditioning block not positive definite after jitter")


def _moments(Xc, xi, wc, yi, theta, keys, Dc, di, order, jitter):
    fam = theta.kernel_family
    s2, t2 = theta.sigma2, theta.tau2
    T, k = wc.shape
    out = {}
    Aii = s2 + t2 + jitter
    if k == 0:
        v = np.full(T, Aii)
        out.update(mean=np.zeros(T), var=v, coef=np.zeros((T, 0)))
    else:
        w = np.ascontiguousarray(theta.sr, dtype=float)
        Xc = np.ascontiguousarray(Xc, dtype=float)
        U = sq_dist_stack(Xc, Xc, w)
        uc = sq_dist_stack(Xc, np.ascontiguousarray(xi[:, None, :], dtype=float), w)[..., 0]
        rho = correlation(U, fam)
        rho_c = correlation(uc, fam)
        B = s2 * rho
        B[:, np.arange(k), np.arange(k)] += t2 + jitter
        a = s2 * rho_c
        L = np.linalg.cholesky(B)
        Z = lower_solve(L, np.stack([a, wc], axis=-1))
        z, zw = Z[..., 0], Z[..., 1]
        v = Aii - np.einsum("ti,ti->t", z, z)
        if not np.all(v > 0):
            raise np.linalg.LinAlgError("nonpositive conditional variance")
        b = upper_solve_t(L, z[..., None])[..., 0]
        out.update(mean=np.einsum("ti,ti->t", z, zw), var=v, coef=b)
    if yi is None:
        return out
    e = yi - out["mean"]
    out["ll"] = -0.5 * (LOG_2PI + np.log(v)) - 0.5 * e * e / v
    if order < 1:
        return out

    p = len(keys)
    sr_pos = [j for j, key in enumerate(keys) if not isinstance(key, str)]
    vj = np.zeros((T, p))
    for j, key in enumerate(keys):
        if isinstance(key, str):
            if key not in ("sigma2", "tau2"):
                raise ValueError(f"invalid parameter {key!r}")
            vj[:, j] = 1.0
    if k:
        R = np.zeros((T, k, p))
        for j, key in enumerate(keys):
            if key == "sigma2":
                R[:, :, j] = rho_c - np.einsum("tij,tj->ti", rho, b)
            elif key == "tau2":
                R[:, :, j] = -b
        if sr_pos:
            Dc = np.ascontiguousarray(Dc, dtype=float)
            G = s2 * correlation_du(U, fam)
            g_c = s2 * correlation_du(uc, fam)
            Bjb = weighted_sqdiff_matvec(G, Dc, b)
            dc = Dc - di[:, None, :]
            aj = g_c[:, :, None] * (dc * dc)
            R[:, :, sr_pos] = aj - Bjb
        # v_j = A_ii,j - 2 a_j'b + b'B_j b = A_ii,j - b'(a_j + R_j)
        AB = np.zeros((T, k, p))
        for j, key in enumerate(keys):
            if key == "sigma2":
                AB[:, :, j] = rho_c
        if sr_pos:
            AB[:, :, sr_pos] = aj
        vj -= np.einsum("ti,tip->tp", b, AB + R)
        S = lower_solve(L, R)
        ej = -np.einsum("tip,ti->tp", S, zw)
    else:
        S = None
        ej = np.zeros((T, p))
    vinv = 1.0 / v
    out["grad"] = (-0.5 * vj * vinv[:, None] - (e * vinv)[:, None] * ej
                   + 0.5 * (e * e * vinv * vinv)[:, None] * vj)
    if order >= 2:
        fim = 0.5 * (vinv * vinv)[:, None, None] * vj[:, :, None] * vj[:, None, :]
        if k:
            fim += np.einsum("tip,tiq->tpq", S, S) * vinv[:, None, None]
        out["fim"] = fim
    return out


def _sr_columns(keys):
    return [int(k) for k in keys if not isinstance(k, str)]


def vecchia_terms(ds, plan: VecchiaPlan, theta: Hyperparameters, keys=None,
                  batch: Optional[MiniBatch] = None, order: int = 0):
    """Per-term log-densities (and derivatives) for the positions in ``batch``.

    Returns ``(positions, ll, grad, fim)``; positions are ascending and the
    other arrays are aligned with them.
    """
    X = np.asarray(getattr(ds, "X", ds), dtype=float)
    y = np.asarray(ds.y, dtype=float)
    n = X.shape[0]
    if plan.n != n:
        raise ValueError(f"plan built for n={plan.n}, dataset has n={n}")
    if keys is None:
        keys = default_keys(X.shape[1])
    keys = list(keys)
    pos = np.arange(n) if batch is None else np.asarray(batch.indices, dtype=int)
    if pos.size and (pos.min() < 0 or pos.max() >= n):
        raise IndexError("batch index out of range")
    pos = np.sort(pos)
    kcols = np.flatnonzero(theta.sr > 0)
    dcols = _sr_columns(keys)
    Xk = X[:, kcols]
    Xd = X[:, dcols]
    th_k = Hyperparameters(theta.sigma2, theta.sr[kcols], theta.tau2, theta.kernel_family)
    yp = y[plan.perm]
    p = len(keys)
    ll = np.empty(pos.size)
    grad = np.empty((pos.size, p)) if order >= 1 else None
    fim = np.empty((pos.size, p, p)) if order >= 2 else None
    sizes = plan.sizes[pos]
    for k in np.unique(sizes):
        where = np.flatnonzero(sizes == k)
        step = max(1, _CHUNK_ELEMS // max(1, int(k) * int(k)))
        for s in range(0, where.size, step):
            w = where[s: s + step]
            P = pos[w]
            ci = plan.cond[P, :k]
            rc = plan.perm[ci]
            ri = plan.perm[P]
            res = conditional_moments(Xk[rc], Xk[ri], yp[ci], yp[P], th_k, keys,
                                      Dc=Xd[rc], di=Xd[ri], order=order)
            ll[w] = res["ll"]
            if grad is not None:
                grad[w] = res["grad"]
            if fim is not None:
                fim[w] = res["fim"]
    return pos, ll, grad, fim


def vecchia_report(ds, plan, theta, active=None, batch=None, order: int = 2) -> LikelihoodReport:
    keys = default_keys(np.asarray(getattr(ds, "X", ds)).shape[1]) if active is None else list(active)
    _, ll, grad, fim = vecchia_terms(ds, plan, theta, keys, batch, order)
    return LikelihoodReport(
        float(ll.sum()),
        None if grad is None else grad.sum(axis=0),
        None if fim is None else fim.sum(axis=0),
        keys,
    )


def vecchia_loglik(ds, plan, theta, batch=None) -> float:
    """Vecchia log-likelihood, optionally restricted to a mini-batch of terms."""
    _, ll, _, _ = vecchia_terms(ds, plan, theta, [], batch, order=0)
    return float(ll.sum())


def vecchia_grad(ds, plan, theta, active=None, batch=None) -> np.ndarray:
    """Score of :func:`vecchia_loglik` for the parameters in ``active``.

    ``active`` lists parameter keys (``"sigma2"``, ``"tau2"`` or covariate
    indices); the default is all of them.  Batch sums are not rescaled.
    """
    return vecchia_report(ds, plan, theta, active, batch, order=1).grad


def vecchia_fim(ds, plan, theta, active=None, batch=None) -> np.ndarray:
    """Fisher information of the (batched) Vecchia log-likelihood."""
    fim = vecchia_report(ds, plan, theta, active, batch, order=2).fim
    return 0.5 * (fim + fim.T)


def conditional_coefficients(ds, plan: VecchiaPlan, theta: Hyperparameters):
    """Kriging weights ``b_i`` (padded to ``m``) and variances ``v_i`` of every term."""
    X = np.asarray(getattr(ds, "X", ds), dtype=float)
    n = X.shape[0]
    kcols = np.flatnonzero(theta.sr > 0)
    Xk = X[:, kcols]
    th_k = Hyperparameters(theta.sigma2, theta.sr[kcols], theta.tau2, theta.kernel_family)
    m_eff = plan.cond.shape[1]
    coef = np.zeros((n, m_eff))
    var = np.empty(n)
    for k in np.unique(plan.sizes):
        where = np.flatnonzero(plan.sizes == k)
        step = max(1, _CHUNK_ELEMS // max(1, int(k) * int(k)))
        for s in range(0, where.size, step):
            P = where[s: s + step]
            ci = plan.cond[P, :k]
            res = conditional_moments(Xk[plan.perm[ci]], Xk[plan.perm[P]], np.zeros((P.size, k)), None, th_k)
            coef[P, :k] = res["coef"]
            var[P] = res["var"]
    return coef, var
