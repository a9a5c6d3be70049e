"""Weighted norms, empirical Wasserstein-2 estimators and small numerical helpers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

#: exact assignment is O(n^3); larger clouds in d > 1 go through 1-d projections
EXACT_W2_MAX = 256


@dataclass(frozen=True)
class WeightedNormParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"weighted norm needs a, b > 0, got a={self.a}, b={self.b}")

    @property
    def equivalent(self) -> bool:
        """Whether ``b^2 < a/4``, the condition for the two-sided equivalence bounds."""
        return self.b * self.b < self.a / 4


def wnorm_sq(x, v, a: float, b: float) -> np.ndarray:
    """``|x|^2 + 2b<x, v> + a|v|^2`` over the last axis."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.sum(x * x + 2.0 * b * x * v + a * v * v, axis=-1)


def weighted_norm_sq(z, w: WeightedNormParams) -> np.ndarray:
    return wnorm_sq(z.x, z.v, w.a, w.b)


def equivalence_bounds(w: WeightedNormParams) -> tuple[float, float]:
    """Factors ``(lo, hi)`` with ``lo |z|^2 <= |z|_{a,b}^2 <= hi |z|^2`` when ``b^2 < a/4``."""
    return 0.5 * min(1.0, w.a), 1.5 * max(1.0, w.a)


@dataclass(frozen=True)
class SampleCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a sample cloud needs a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample cloud contains non-finite points")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def as_cloud(s) -> SampleCloud:
    return s if isinstance(s, SampleCloud) else SampleCloud(s)


def w2_1d(s1, s2) -> float:
    """Exact W2 between equal-size 1-d empirical laws (sorted matching)."""
    a, b = as_cloud(s1), as_cloud(s2)
    if a.dim != 1 or b.dim != 1:
        raise ValueError("w2_1d needs one-dimensional clouds")
    if len(a) != len(b):
        raise ValueError(f"clouds must have equal size, got {len(a)} and {len(b)}")
    d = np.sort(a.points[:, 0]) - np.sort(b.points[:, 0])
    return float(np.sqrt(np.mean(d * d)))


def w2_exact_smalln(s1, s2) -> float:
    """Exact empirical W2 by optimal assignment on squared distances (n <= 256)."""
    a, b = as_cloud(s1), as_cloud(s2)
    if len(a) != len(b):
        raise ValueError(f"clouds must have equal size, got {len(a)} and {len(b)}")
    if len(a) > EXACT_W2_MAX:
        raise ValueError(f"exact assignment limited to n <= {EXACT_W2_MAX}, got {len(a)}")
    if a.dim != b.dim:
        raise ValueError("clouds must share a dimension")
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sum(diff * diff, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def w2_per_coordinate(s1, s2) -> np.ndarray:
    """1-d W2 of every coordinate marginal; the root-sum-square lower-bounds the joint W2."""
    a, b = as_cloud(s1), as_cloud(s2)
    if a.dim != b.dim:
        raise ValueError("clouds must share a dimension")
    return np.array([w2_1d(a.points[:, j], b.points[:, j]) for j in range(a.dim)])


def gaussian_w2(m1, s1: float, m2, s2: float) -> float:
    """W2 between isotropic Gaussians ``N(m1, s1^2 I)`` and ``N(m2, s2^2 I)``."""
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    if s1 < 0 or s2 < 0:
        raise ValueError("standard deviations must be nonnegative")
    d = m1.size
    return float(np.sqrt(np.sum((m1 - m2) ** 2) + d * (s1 - s2) ** 2))


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], point, h: float | None = None) -> np.ndarray:
    """Central finite-difference Jacobian of a vector map at ``point``.

    Default step ``1e-5 * (1 + |point|)``.
    """
    p = np.asarray(point, dtype=float).ravel()
    if h is None:
        h = 1e-5 * (1.0 + np.linalg.norm(p))
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    f0 = np.asarray(fn(p), dtype=float).ravel()
    J = np.empty((f0.size, p.size))
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        fp = np.asarray(fn(p + e), dtype=float).ravel()
        fm = np.asarray(fn(p - e), dtype=float).ravel()
        J[:, j] = (fp - fm) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("map produced non-finite values while differencing")
    return J


def top_singular_value(J: np.ndarray, max_iter: int = 50, tol: float = 1e-10) -> float:
    """Largest singular value by power iteration on ``J^T J``."""
    J = np.asarray(J, dtype=float)
    JtJ = J.T @ J
    x = np.ones(J.shape[1]) / np.sqrt(J.shape[1])
    # a fixed start orthogonal to the top vector would stall; nudge deterministically
    x = x + 1e-3 * np.arange(1, J.shape[1] + 1) / J.shape[1]
    x /= np.linalg.norm(x)
    sigma2 = 0.0
    for _ in range(max_iter):
        y = JtJ @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
        new = float(x @ JtJ @ x)
        if abs(new - sigma2) <= tol * max(new, 1e-300):
            sigma2 = new
            break
        sigma2 = new
    return float(np.sqrt(max(sigma2, 0.0)))


def jacobian_opnorm_fd(fn, point, h: float | None = None, max_iter: int = 50, tol: float = 1e-10) -> float:
    return top_singular_value(fd_jacobian(fn, point, h), max_iter=max_iter, tol=tol)


def order_fit(lambdas, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(lambda)``."""
    lam = np.asarray(lambdas, dtype=float)
    err = np.asarray(errors, dtype=float)
    if lam.shape != err.shape or lam.size < 2:
        raise ValueError("need at least two (lambda, error) pairs of equal length")
    if np.any(lam <= 0) or np.any(err <= 0):
        raise ValueError("order_fit needs strictly positive step sizes and errors")
    slope, _ = np.polyfit(np.log(lam), np.log(err), 1)
    return float(slope)


def moment_bound_check(samples, p, chain_means=None) -> dict:
    """Compare the empirical second moment with ``(2/m)(u(0) + d)``.

    ``chain_means`` (optional) are per-chain time averages of ``|Y|^2``; when
    given, the standard error is taken across chains, which accounts for
    autocorrelation inside a chain. Otherwise the samples are treated as
    independent.
    """
    cloud = as_cloud(samples)
    sq = np.sum(cloud.points**2, axis=1)
    if chain_means is not None:
        cm = np.asarray(chain_means, dtype=float)
        mean = float(cm.mean())
        se = float(cm.std(ddof=1) / np.sqrt(cm.size)) if cm.size > 1 else float("inf")
    else:
        mean = float(sq.mean())
        se = float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else float("inf")
    bound = 2.0 / p.m * (p.u0() + p.dim)
    return {
        "second_moment": mean,
        "stderr": se,
        "bound": bound,
        "violated": bool(mean > bound + 3.0 * se),
    }
