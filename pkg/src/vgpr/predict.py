"""Posterior predictive moments from the nearest training neighbours."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .kernel import Hyperparameters
from .ordering import _k_smallest, _scaled_coords
from .vecchia import _CHUNK_ELEMS, conditional_moments

_DIST_BLOCK = 4_000_000


def nearest_neighbors(X_train, X_test, sr, m: int) -> np.ndarray:
    """Indices of the ``m`` nearest training rows of every test row under the scaled distance.

    Ties go to the lower training index; each row is sorted nearest first.
    """
    Ztr = _scaled_coords(X_train, sr)
    Zte = _scaled_coords(X_test, sr)
    n = Ztr.shape[0]
    m = min(m, n)
    out = np.empty((Zte.shape[0], m), dtype=int)
    block = max(1, _DIST_BLOCK // max(n, 1))
    for s in range(0, Zte.shape[0], block):
        Zb = Zte[s: s + block]
        D = np.zeros((Zb.shape[0], n))
        for l in range(Zb.shape[1]):
            D += (Zb[:, l, None] - Ztr[None, :, l]) ** 2
        for i in range(Zb.shape[0]):
            out[s + i] = _k_smallest(D[i], m)
    return out


def predict(train, theta: Hyperparameters, X_test, m: int, want_variance: bool = True,
            sr_scaling=None, latent: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Kriging mean and variance at ``X_test`` conditioned on ``m`` nearest training points.

    Parameters
    ----------
    train : Dataset
        Training covariates and (standardized) responses.
    theta : Hyperparameters
        Fitted parameters; only columns with positive ``sr`` enter the kernel.
    X_test : array (n_test, d)
        Test covariates on the same scale as ``train.X``.
    m : int
        Neighbour count, clipped to the training size.
    sr_scaling : array, optional
        Relevances defining the neighbour metric; defaults to ``theta.sr``.
    latent : bool
        Report the variance of the noise-free process instead of the response.

    Returns
    -------
    means, variances (``None`` unless ``want_variance``).
    """
    X = np.asarray(train.X, dtype=float)
    y = np.asarray(train.y, dtype=float)
    Xt = np.atleast_2d(np.asarray(X_test, dtype=float))
    if Xt.shape[1] != X.shape[1]:
        raise ValueError(f"test covariates have {Xt.shape[1]} columns, training has {X.shape[1]}")
    if m < 1:
        raise ValueError("m must be at least 1")
    sr_nn = theta.sr if sr_scaling is None else np.asarray(sr_scaling, dtype=float)
    nbr = nearest_neighbors(X, Xt, sr_nn, m)
    k = nbr.shape[1]
    kcols = np.flatnonzero(theta.sr > 0)
    th_k = Hyperparameters(theta.sigma2, theta.sr[kcols], theta.tau2, theta.kernel_family)
    Xk, Xtk = X[:, kcols], Xt[:, kcols]
    mean = np.empty(Xt.shape[0])
    var = np.empty(Xt.shape[0])
    step = max(1, _CHUNK_ELEMS // max(1, k * k))
    for s in range(0, Xt.shape[0], step):
        idx = nbr[s: s + step]
        res = conditional_moments(Xk[idx], Xtk[s: s + step], y[idx], None, th_k)
        mean[s: s + step] = res["mean"]
        var[s: s + step] = res["var"]
    if not want_variance:
        return mean, None
    var = np.clip(var, 0.0, theta.sigma2 + theta.tau2)
    if latent:
        var = np.maximum(var - theta.tau2, 0.0)
    return mean, var


def destandardize(ds, mean, var=None):
    """Map standardized predictions back to the response's original scale."""
    mean = np.asarray(mean, dtype=float) * ds.y_sd + ds.y_mean
    if var is None:
        return mean, None
    return mean, np.asarray(var, dtype=float) * ds.y_sd ** 2


def write_predictions(path, mean, var=None, row_ids=None) -> None:
    n = len(mean)
    row_ids = range(n) if row_ids is None else row_ids
    lines = ["row_id,mean,variance"]
    for r, mu, v in zip(row_ids, mean, var if var is not None else [float("nan")] * n):
        lines.append(f"{r},{float(mu)!r},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
