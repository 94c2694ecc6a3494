"""Deterministic linear-algebra kernel for break regressions.

Provides the dataset/segmentation containers, break design matrices in the
first-difference parametrization, pivoted-QR least squares, partitioned
residual sums of squares, and maximized Gaussian log-likelihoods on row
windows.  Everything here is a pure function of its inputs.

Index conventions: observations are 1-based, and a break date is the index of
the *last* observation of its regime, so a break at tau means rows 1..tau
belong to one regime and rows tau+1.. to the next.  Regime j of a
segmentation with breaks (tau_1, ..., tau_{m-1}) covers rows
tau_{j-1}+1 .. tau_j with tau_0 = 0 and tau_m = T.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg

from .exceptions import (
    InsufficientObservationsError,
    InvalidSegmentationError,
    SingularDesignError,
    WindowTooShortError,
)

# Relative tolerance for declaring a pivot (hence a column) numerically zero.
RANK_RTOL = 1e-10

# Perfect-fit guard: sigma^2 below this fraction of var(y) is clamped so the
# window log-likelihood stays finite (scan statistics on short windows).
SIGMA2_FLOOR_REL = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Response vector and covariate matrix with column labels.

    Attributes
    ----------
    y : ndarray, shape (T,)
        Response.
    X : ndarray, shape (T, K)
        Covariates; column 1 may be the constant.
    names : tuple of str
        One label per covariate column.
    """

    y: np.ndarray
    X: np.ndarray
    names: tuple

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float).ravel())
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))
        if X.shape[0] != y.shape[0]:
            raise ValueError("y and X row counts differ")
        if len(self.names) != X.shape[1]:
            raise ValueError(f"expected {X.shape[1]} names, got {len(self.names)}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("non-finite entries in y or X")
        if y.shape[0] < X.shape[1] + 1:
            raise ValueError("need T >= K + 1 observations")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    def rows(self, t1: int, t2: int) -> "Dataset":
        """Sub-dataset of rows t1..t2 (1-based, inclusive)."""
        return Dataset(self.y[t1 - 1 : t2], self.X[t1 - 1 : t2], self.names)


@dataclass(frozen=True)
class Segmentation:
    """Ordered break dates defining m regimes.

    ``tau`` holds the 1-based last observation of each regime except the
    final one; an empty tuple means a single regime.
    """

    tau: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(int(t) for t in self.tau))

    @property
    def m(self) -> int:
        return len(self.tau) + 1

    def boundaries(self, T: int) -> tuple:
        """(tau_0=0, tau_1, ..., tau_m=T)."""
        return (0,) + self.tau + (T,)

    def regime_lengths(self, T: int) -> np.ndarray:
        b = self.boundaries(T)
        return np.diff(np.asarray(b))

    def validate(self, T: int, min_len: int = 1) -> None:
        """Raise InvalidSegmentationError unless 0 < tau_1 < ... < T with all
        regime lengths >= min_len (the consumer supplies the duration)."""
        b = self.boundaries(T)
        for prev, cur in zip(b, b[1:]):
            if cur <= prev:
                raise InvalidSegmentationError(f"break dates not increasing in (0, {T}): {self.tau}")
            if cur - prev < min_len:
                raise InvalidSegmentationError(
                    f"regime ({prev}, {cur}] shorter than minimum duration {min_len}"
                )


@dataclass(frozen=True)
class BreakDesign:
    """Stacked [T x mK] design: base covariates then one zeroed block per break."""

    Xfull: np.ndarray
    m: int
    K: int

    def column(self, j: int, k: int) -> int:
        """0-based column of covariate k (1-based) in regime block j (1-based)."""
        return (j - 1) * self.K + (k - 1)


def active_columns(active: Iterable, K: int) -> list:
    """Sorted 0-based design columns for an active set of (regime, covariate) pairs."""
    return [(j - 1) * K + (k - 1) for (j, k) in sorted(active)]


def validate_active(active: Iterable, m: int, K: int) -> frozenset:
    act = frozenset((int(j), int(k)) for (j, k) in active)
    for j, k in act:
        if not (2 <= j <= m and 1 <= k <= K):
            raise ValueError(f"active entry ({j},{k}) outside regimes 2..{m} x covariates 1..{K}")
    return act


def build_break_design(data: Dataset, seg: Segmentation) -> BreakDesign:
    """Stack the base covariates with one block per break, each block zeroed
    before its break date.  With m = 1 the design is X unchanged."""
    T, K = data.T, data.K
    seg.validate(T, min_len=1)
    m = seg.m
    Xfull = np.zeros((T, m * K))
    Xfull[:, :K] = data.X
    for j in range(2, m + 1):
        start = seg.tau[j - 2]  # rows 1..start are zero in block j
        Xfull[start:, (j - 1) * K : j * K] = data.X[start:, :]
    return BreakDesign(Xfull=Xfull, m=m, K=K)


@dataclass(frozen=True)
class OlsResult:
    """Least-squares solution with its pivoted triangular factor for reuse."""

    beta_hat: np.ndarray
    rss: float
    dof: int
    xtx_factor: tuple = field(repr=False, default=None)  # (R, pivot) with R'R = (XP)'(XP)


def ols(y: np.ndarray, X: np.ndarray) -> OlsResult:
    """Least squares via pivoted QR; raises SingularDesignError when the
    design is numerically rank deficient (tolerance RANK_RTOL * ||X||)."""
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if p >= n + 1:
        raise InsufficientObservationsError(f"{p} columns for {n} observations")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = RANK_RTOL * np.linalg.norm(X)
    bad = np.nonzero(diag <= tol)[0]
    if bad.size:
        col = int(piv[bad[0]])
        raise SingularDesignError(f"design column {col} is numerically dependent", column=col)
    z = Q.T @ y
    beta_piv = scipy.linalg.solve_triangular(R, z, lower=False)
    beta = np.empty(p)
    beta[piv] = beta_piv
    resid = y - X @ beta
    rss = float(resid @ resid)
    return OlsResult(beta_hat=beta, rss=rss, dof=n - p, xtx_factor=(R, piv))


def rss_partitioned(data: Dataset, seg: Segmentation, active: Iterable) -> tuple:
    """(s_base, s_full): residual sums of squares of the no-break regression
    and of the regression augmented with the active break columns."""
    act = validate_active(active, seg.m, data.K)
    base = ols(data.y, data.X)
    if not act:
        return base.rss, base.rss
    design = build_break_design(data, seg)
    cols = active_columns(act, data.K)
    Xa = np.hstack([data.X, design.Xfull[:, cols]])
    if Xa.shape[1] >= data.T:
        raise InsufficientObservationsError(
            f"{Xa.shape[1]} columns for {data.T} observations"
        )
    full = ols(data.y, Xa)
    return base.rss, full.rss


def _max_loglik(n: int, rss: float, sigma2_floor: float) -> tuple:
    """Maximized Gaussian log-likelihood -(n/2)(ln(2 pi s2) + 1) with the
    perfect-fit clamp; returns (loglik, degenerate_flag)."""
    sigma2 = rss / n
    degenerate = sigma2 < sigma2_floor
    if degenerate:
        sigma2 = sigma2_floor
    return -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0), degenerate


def sigma2_floor_for(y: np.ndarray) -> float:
    """Clamp level 1e-12 * var(y); falls back to an absolute floor for a
    constant response so the sentinel stays finite."""
    v = float(np.var(y))
    return SIGMA2_FLOOR_REL * v if v > 0.0 else 1e-30


def gaussian_loglik(data: Dataset, t1: int, t2: int, with_flag: bool = False):
    """Maximum Gaussian log-likelihood of the regression on rows t1..t2.

    Perfect fits are clamped (large finite sentinel) rather than returning
    +inf; pass with_flag=True to also receive the degenerate indicator.
    """
    n = t2 - t1 + 1
    if not (1 <= t1 <= t2 <= data.T):
        raise WindowTooShortError(f"window [{t1}, {t2}] outside 1..{data.T}")
    if n < data.K + 1:
        raise WindowTooShortError(f"window [{t1}, {t2}] has {n} rows < K+1 = {data.K + 1}")
    res = ols(data.y[t1 - 1 : t2], data.X[t1 - 1 : t2])
    loglik, degenerate = _max_loglik(n, res.rss, sigma2_floor_for(data.y))
    if with_flag:
        return loglik, degenerate
    return loglik


class CumulantTable:
    """Prefix sums of (x_t, y_t) cross products for O(K^2) window Grams.

    Used by the scan and the dynamic program to evaluate many window
    log-likelihoods without refactoring; results agree with the QR path to
    working precision for the well-conditioned windows they are used on.
    """

    def __init__(self, data: Dataset):
        self.data = data
        Z = np.hstack([data.X, data.y[:, None]])
        C = np.einsum("ti,tj->tij", Z, Z)
        table = np.zeros((data.T + 1, data.K + 1, data.K + 1))
        np.cumsum(C, axis=0, out=table[1:])
        self._table = table
        self._floor = sigma2_floor_for(data.y)

    def gram(self, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        """Batched Gram of rows t1..t2 (1-based inclusive, arrays)."""
        return self._table[t2] - self._table[t1 - 1]

    def rss(self, t1, t2) -> np.ndarray:
        """Batched window RSS via normal equations (Cholesky, lstsq fallback)."""
        t1 = np.atleast_1d(np.asarray(t1, dtype=int))
        t2 = np.atleast_1d(np.asarray(t2, dtype=int))
        K = self.data.K
        G = self.gram(t1, t2)
        Gxx = G[:, :K, :K]
        Gxy = G[:, :K, K]
        Gyy = G[:, K, K]
        try:
            b = np.linalg.solve(Gxx, Gxy[..., None])[..., 0]
            rss = Gyy - np.einsum("bi,bi->b", Gxy, b)
        except np.linalg.LinAlgError:
            rss = np.empty(len(t1))
            for i, (a, bnd) in enumerate(zip(t1, t2)):
                Xi = self.data.X[a - 1 : bnd]
                yi = self.data.y[a - 1 : bnd]
                beta, res, *_ = np.linalg.lstsq(Xi, yi, rcond=None)
                r = yi - Xi @ beta
                rss[i] = r @ r
        return np.maximum(rss, 0.0)

    def loglik(self, t1, t2) -> np.ndarray:
        """Batched maximized Gaussian log-likelihood on rows t1..t2."""
        t1 = np.atleast_1d(np.asarray(t1, dtype=int))
        t2 = np.atleast_1d(np.asarray(t2, dtype=int))
        n = (t2 - t1 + 1).astype(float)
        sigma2 = np.maximum(self.rss(t1, t2) / n, self._floor)
        return -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0)
