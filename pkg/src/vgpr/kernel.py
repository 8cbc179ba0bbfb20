"""ARD kernels on squared relevances.

Two isotropic families are supported, both written as functions of the
squared scaled distance ``u = q**2 = sum_l sr_l * (x_il - x_jl)**2``:

* ``matern25``: ``sigma2 * (1 + q + q**2 / 3) * exp(-q)``
* ``sqexp``:    ``sigma2 * exp(-q**2)``

Working in ``u`` keeps the derivative with respect to every squared
relevance finite when two points coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

KERNEL_FAMILIES = ("matern25", "sqexp")

#: Lower bounds used when (sigma2, tau2) are optimization variables.
VARIANCE_FLOOR = 1e-8

ParamKey = Union[str, int]


@dataclass
class Hyperparameters:
    """Covariance parameters ``(sigma2, sr, tau2)``.

    ``sr`` holds the squared relevances, one per covariate.  Relevances
    themselves are only ever derived (``np.sqrt(sr)``).
    """

    sigma2: float
    sr: np.ndarray
    tau2: float
    kernel_family: str = "matern25"

    def __post_init__(self):
        self.sr = np.array(self.sr, dtype=float).reshape(-1)
        self.sigma2 = float(self.sigma2)
        self.tau2 = float(self.tau2)
        if self.kernel_family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.kernel_family!r}")
        if not (np.all(np.isfinite(self.sr)) and np.isfinite(self.sigma2) and np.isfinite(self.tau2)):
            raise ValueError("hyperparameters must be finite")
        if self.sigma2 < 0 or self.tau2 < 0 or np.any(self.sr < 0):
            raise ValueError("hyperparameters must be nonnegative")

    @property
    def d(self) -> int:
        return self.sr.shape[0]

    @property
    def relevance(self) -> np.ndarray:
        return np.sqrt(self.sr)

    def copy(self) -> "Hyperparameters":
        return replace(self, sr=self.sr.copy())

    def to_vector(self, keys: Sequence[ParamKey]) -> np.ndarray:
        """Pack the parameters named by ``keys`` into a flat vector."""
        return np.array([self.get(k) for k in keys], dtype=float)

    def get(self, key: ParamKey) -> float:
        if key == "sigma2":
            return self.sigma2
        if key == "tau2":
            return self.tau2
        return float(self.sr[int(key)])

    def with_vector(self, keys: Sequence[ParamKey], values) -> "Hyperparameters":
        """Return a copy with the parameters in ``keys`` replaced by ``values``."""
        out = self.copy()
        for k, v in zip(keys, np.asarray(values, dtype=float)):
            if k == "sigma2":
                out.sigma2 = float(v)
            elif k == "tau2":
                out.tau2 = float(v)
            else:
                out.sr[int(k)] = float(v)
        return out

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "sr": [float(v) for v in self.sr],
            "tau2": self.tau2,
            "kernel_family": self.kernel_family,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Hyperparameters":
        return cls(obj["sigma2"], np.asarray(obj["sr"], dtype=float), obj["tau2"],
                   obj.get("kernel_family", "matern25"))


def param_keys(zeta: Sequence[int]) -> list:
    """Parameter ordering used throughout: sigma2, the selected sr, tau2."""
    return ["sigma2", *[int(l) for l in zeta], "tau2"]


def lower_bounds(keys: Sequence[ParamKey]) -> np.ndarray:
    return np.array([VARIANCE_FLOOR if k in ("sigma2", "tau2") else 0.0 for k in keys])


def scaled_distance(xi, xj, sr) -> float:
    """Relevance-scaled Euclidean distance between two covariate vectors."""
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    sr = np.asarray(sr, dtype=float)
    if not (xi.shape == xj.shape == sr.shape):
        raise ValueError(f"length mismatch: {xi.shape}, {xj.shape}, {sr.shape}")
    if np.any(sr < 0):
        raise ValueError("squared relevances must be nonnegative")
    act = sr > 0
    return float(np.sqrt(np.sum(sr[act] * (xi[act] - xj[act]) ** 2)))


def correlation(u, family: str = "matern25"):
    """Unit-variance kernel as a function of the squared scaled distance ``u``."""
    u = np.asarray(u, dtype=float)
    if family == "matern25":
        q = np.sqrt(u)
        return (1.0 + q + u / 3.0) * np.exp(-q)
    if family == "sqexp":
        return np.exp(-u)
    raise ValueError(f"unknown kernel family {family!r}")


def correlation_du(u, family: str = "matern25"):
    """Derivative of :func:`correlation` with respect to ``u``.

    For the Matern kernel ``dK/dq = -q (1 + q) exp(-q) / 3`` and
    ``du/dq = 2 q``, so ``dK/du = -(1 + q) exp(-q) / 6``, which tends to
    ``-1/6`` as the points coincide.
    """
    u = np.asarray(u, dtype=float)
    if family == "matern25":
        q = np.sqrt(u)
        return -(1.0 + q) * np.exp(-q) / 6.0
    if family == "sqexp":
        return -np.exp(-u)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_eval(q, sigma2: float, family: str = "matern25"):
    """Evaluate the kernel at scaled distance ``q``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("scaled distance must be nonnegative")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    out = sigma2 * correlation(q * q, family)
    return float(out) if out.ndim == 0 else out


def sq_scaled_distances(A: np.ndarray, B: np.ndarray, sr: np.ndarray) -> np.ndarray:
    """Pairwise ``u`` between the rows of ``A`` (..., a, d) and ``B`` (..., b, d).

    Only coordinates with ``sr > 0`` are visited, and they are accumulated
    in column order, so a zero relevance gives results bitwise identical
    to dropping that column.
    """
    sr = np.asarray(sr, dtype=float)
    cols = np.flatnonzero(sr > 0)
    out = np.zeros(A.shape[:-1] + (B.shape[-2],))
    for l in cols:
        diff = A[..., :, None, l] - B[..., None, :, l]
        out += sr[l] * (diff * diff)
    return out


def _as_X(ds) -> np.ndarray:
    return np.asarray(getattr(ds, "X", ds), dtype=float)


def _check_index(idx, n):
    idx = np.asarray(idx, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"index out of range for n={n}")
    return idx


def covariance_block(rows, cols, ds, theta: Hyperparameters, add_noise: bool = False) -> np.ndarray:
    """Covariance matrix between the observations ``rows`` and ``cols``.

    With ``add_noise`` the nugget ``tau2`` is added wherever the row and
    column refer to the same observation.
    """
    X = _as_X(ds)
    rows = _check_index(rows, X.shape[0])
    cols = _check_index(cols, X.shape[0])
    u = sq_scaled_distances(X[rows], X[cols], theta.sr)
    K = theta.sigma2 * correlation(u, theta.kernel_family)
    if add_noise:
        K = K + theta.tau2 * (rows[:, None] == cols[None, :])
    return K


def covariance_block_grad(rows, cols, ds, theta: Hyperparameters, wrt: ParamKey,
                          add_noise: bool = True) -> np.ndarray:
    """Entrywise derivative of :func:`covariance_block` w.r.t. one parameter.

    ``wrt`` is ``"sigma2"``, ``"tau2"`` or an integer covariate index ``l``
    (derivative with respect to ``sr[l]``).
    """
    X = _as_X(ds)
    rows = _check_index(rows, X.shape[0])
    cols = _check_index(cols, X.shape[0])
    same = rows[:, None] == cols[None, :]
    if wrt == "tau2":
        return same.astype(float) if add_noise else np.zeros(same.shape)
    u = sq_scaled_distances(X[rows], X[cols], theta.sr)
    if wrt == "sigma2":
        return correlation(u, theta.kernel_family)
    if isinstance(wrt, str):
        raise ValueError(f"invalid parameter {wrt!r}")
    l = int(wrt)
    if not 0 <= l < X.shape[1]:
        raise ValueError(f"invalid covariate index {l}")
    D = (X[rows, l][:, None] - X[cols, l][None, :]) ** 2
    return theta.sigma2 * correlation_du(u, theta.kernel_family) * D
