"""Datasets: CSV I/O, standardization, splitting and GP simulation."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .kernel import Hyperparameters, covariance_block

DENSE_SAMPLING_LIMIT = 8192
OOS_CAP = 5000


class DataError(ValueError):
    """Raised for malformed input files or invalid datasets."""


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class Dataset:
    """Covariates ``X`` (n x d) and responses ``y`` (n,).

    After :func:`standardize`, ``col_means``/``col_sds`` and
    ``y_mean``/``y_sd`` hold the statistics needed to map new covariates
    onto the same scale and predictions back to the original one.
    """

    X: np.ndarray
    y: np.ndarray
    standardized: bool = False
    col_means: Optional[np.ndarray] = None
    col_sds: Optional[np.ndarray] = None
    y_mean: float = 0.0
    y_sd: float = 1.0
    constant_cols: List[int] = field(default_factory=list)
    columns: Optional[List[str]] = None
    response: str = "y"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.ndim != 2:
            raise DataError("X must be a 2-d array")
        n, d = self.X.shape
        if n < 1 or d < 1:
            raise DataError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        if self.y.shape[0] != n:
            raise DataError(f"X has {n} rows but y has {self.y.shape[0]} entries")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("X and y must be finite")
        if self.columns is None:
            self.columns = [f"x{l + 1}" for l in range(d)]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx], constant_cols=list(self.constant_cols),
                       columns=list(self.columns))

    def transform_X(self, X) -> np.ndarray:
        """Apply the stored covariate standardization to new rows."""
        X = np.asarray(X, dtype=float)
        if not self.standardized:
            return X
        return (X - self.col_means) / self.col_sds

    def inverse_y(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_sd + self.y_mean


def load_csv(path, response_column: str) -> Dataset:
    """Read a comma-separated file with a header row.

    The response is ``response_column``; every other column becomes a
    covariate, in header order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if response_column not in header:
            raise DataError(f"{path}: response column {response_column!r} not found; "
                            f"available columns: {', '.join(header)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            vals = []
            for name, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: cannot parse row {lineno}, column {name!r}: {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {name!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    j = header.index(response_column)
    xcols = [i for i in range(len(header)) if i != j]
    if not xcols:
        raise DataError(f"{path}: no covariate columns")
    return Dataset(arr[:, xcols], arr[:, j], columns=[header[i] for i in xcols], response=response_column)


def load_covariates(path, columns: Sequence[str]) -> np.ndarray:
    """Read the named columns of a CSV file (other columns are ignored)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = [header.index(c) for c in columns]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            vals = []
            for j in pos:
                try:
                    v = float(rec[j])
                except ValueError:
                    raise DataError(f"{path}: cannot parse row {lineno}, column {header[j]!r}: {rec[j]!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {header[j]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float).reshape(len(rows), len(columns))


def save_csv(ds: Dataset, path, response_column: Optional[str] = None) -> None:
    """Write ``ds`` as CSV, response first, with round-trip float formatting."""
    name = response_column or ds.response
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([name, *ds.columns])
        for yi, xi in zip(ds.y, ds.X):
            w.writerow([repr(float(yi)), *(repr(float(v)) for v in xi)])


def standardize(ds: Dataset) -> Dataset:
    """Center and scale every column (sample sd, divisor n - 1).

    Constant columns are centered only; their sd is recorded as 1 and
    their index listed in ``constant_cols``.
    """
    if ds.standardized:
        raise DataError("dataset is already standardized")
    n = ds.n
    means = ds.X.mean(axis=0)
    sds = ds.X.std(axis=0, ddof=1) if n > 1 else np.zeros(ds.d)
    const = [int(l) for l in np.flatnonzero(~(sds > 0))]
    sds = np.where(sds > 0, sds, 1.0)
    y_mean = float(ds.y.mean())
    y_sd = float(ds.y.std(ddof=1)) if n > 1 else 0.0
    if not y_sd > 0:
        y_sd = 1.0
    return replace(ds, X=(ds.X - means) / sds, y=(ds.y - y_mean) / y_sd, standardized=True,
                   col_means=means, col_sds=sds, y_mean=y_mean, y_sd=y_sd,
                   constant_cols=const, columns=list(ds.columns))


def oos_size(n: int) -> int:
    return min(n // 4, OOS_CAP)


def train_oos_split(ds: Dataset, seed: int):
    """Hold out ``min(n // 4, 5000)`` rows, chosen uniformly at random."""
    if ds.n < 8:
        raise DataError(f"need at least 8 rows to split, got {ds.n}")
    rng = rng_stream(seed, "split")
    held = np.sort(rng.choice(ds.n, size=oos_size(ds.n), replace=False))
    mask = np.zeros(ds.n, dtype=bool)
    mask[held] = True
    return ds.subset(np.flatnonzero(~mask)), ds.subset(held)


@dataclass
class SimulationSpec:
    n: int
    d: int
    theta_true: Hyperparameters
    covariate_mode: str = "lhs"  # "lhs" or "normal"
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.covariate_mode not in ("lhs", "normal"):
            raise ValueError(f"unknown covariate mode {self.covariate_mode!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.theta_true.d != self.d:
            raise ValueError("theta_true.sr must have length d")


def paper_theta(d: int, family: str = "matern25") -> Hyperparameters:
    """Five true covariates with sr = (100, 25, 4, 1, 0.25), sigma2 = 1, tau2 = 0.05**2."""
    sr = np.zeros(d)
    head = np.array([10.0, 5.0, 2.0, 1.0, 0.5]) ** 2
    sr[: min(d, 5)] = head[: min(d, 5)]
    return Hyperparameters(1.0, sr, 0.05 ** 2, family)


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Each column is a random permutation of jittered strata on [0, 1]."""
    out = np.empty((n, d))
    for l in range(d):
        strata = (np.arange(n) + rng.random(n)) / n
        out[:, l] = strata[rng.permutation(n)]
    return out


def correlated_normal(n: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Equicorrelated normal covariates, columns rescaled to sample sd 1."""
    common = rng.standard_normal((n, 1))
    X = math.sqrt(rho) * common + math.sqrt(1.0 - rho) * rng.standard_normal((n, d))
    sd = X.std(axis=0, ddof=1) if n > 1 else np.ones(d)
    return X / np.where(sd > 0, sd, 1.0)


def psd_sqrt_factor(S: np.ndarray) -> np.ndarray:
    """Matrix ``F`` with ``F @ F.T == S`` for a positive semidefinite ``S``.

    Cholesky is tried first; a singular but PSD matrix falls back to an
    eigendecomposition with clipped eigenvalues.
    """
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(S)
    scale = max(float(np.abs(w).max()), 1e-300)
    if w.min() < -1e-8 * scale:
        raise np.linalg.LinAlgError("covariance matrix is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(spec: SimulationSpec) -> Dataset:
    """Draw covariates and a zero-mean GP response for ``spec``."""
    rng_x = rng_stream(spec.seed, "covariates")
    rng_y = rng_stream(spec.seed, "response")
    if spec.covariate_mode == "lhs":
        X = latin_hypercube(spec.n, spec.d, rng_x)
    else:
        X = correlated_normal(spec.n, spec.d, spec.rho, rng_x)
    z = rng_y.standard_normal(spec.n)
    theta = spec.theta_true
    if spec.n <= DENSE_SAMPLING_LIMIT:
        idx = np.arange(spec.n)
        S = covariance_block(idx, idx, X, theta, add_noise=True)
        y = psd_sqrt_factor(S) @ z
    else:
        y = _vecchia_sample(X, theta, z)
    return Dataset(X, y)


def _vecchia_sample(X, theta, z, m: int = 100):
    """Approximate draw through the sparse Vecchia inverse Cholesky factor."""
    from scipy.sparse.linalg import spsolve_triangular

    from .oracle import vecchia_implied_precision_factor
    from .ordering import build_plan

    plan = build_plan(X, theta, m, "scaled-nn")
    U = vecchia_implied_precision_factor(plan, X, theta)
    yp = spsolve_triangular(U.T.tocsr(), z, lower=True)
    y = np.empty_like(yp)
    y[plan.perm] = yp
    return y
