"""Jackknife errors and weighted least-squares fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

CONFIDENCE = 0.95


def pairwise_sum(values: np.ndarray) -> float:
    """Sum by a fixed binary tree, independent of how samples were scheduled."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return 0.0
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])


def mean(values) -> float:
    v = np.asarray(values, dtype=float)
    return pairwise_sum(v) / v.size


def sample_variance(values) -> float:
    """Two-pass unbiased variance."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two values")
    m = mean(v)
    return pairwise_sum((v - m) ** 2) / (v.size - 1)


def t_quantile(n: int, confidence: float = CONFIDENCE) -> float:
    return float(sps.t.ppf(0.5 + confidence / 2, max(n - 1, 1)))


def jackknife(values, estimator: Callable[[np.ndarray], float] = mean) -> tuple[float, float]:
    """Leave-one-out jackknife: ``(estimate on all samples, jackknife variance)``.

    The variance is ``(n-1)/n * sum (theta_(i) - theta_bar)^2``; for the mean it
    equals ``s^2 / n``, e.g. ``(a-b)^2 / 4`` for the pair ``{a, b}``.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise ValueError("jackknife needs at least two samples")
    full = float(estimator(v))
    loo = np.array([estimator(np.delete(v, i, axis=0)) for i in range(n)])
    var = (n - 1) / n * pairwise_sum((loo - mean(loo)) ** 2)
    return full, float(var)


def jackknife_ci(values, estimator=mean, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """``(estimate, CI half-width)`` with a Student-t quantile."""
    est, var = jackknife(values, estimator)
    return est, t_quantile(len(values), confidence) * np.sqrt(var)


def variance_with_ci(values, confidence: float = CONFIDENCE) -> tuple[float, float]:
    return jackknife_ci(values, sample_variance, confidence)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    stderr: float
    r2: float
    residuals: np.ndarray = field(repr=False)
    n_points: int = 0


def weighted_linear_fit(x, y, sigma=None) -> LinearFit:
    """Least squares ``y = a + b x`` with optional per-point standard deviations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 points")
    if np.ptp(x) == 0 or len(np.unique(x)) < len(x):
        raise ValueError("degenerate abscissa")
    if sigma is None or np.any(np.asarray(sigma) <= 0) or not np.all(np.isfinite(sigma)):
        w = np.ones(n)
    else:
        w = 1.0 / np.asarray(sigma, dtype=float) ** 2
    X = np.stack([np.ones(n), x], axis=1)
    XtW = X.T * w
    cov_unscaled = np.linalg.inv(XtW @ X)
    a, b = cov_unscaled @ (XtW @ y)
    res = y - (a + b * x)
    s2 = float(np.sum(w * res**2) / (n - 2))
    stderr = float(np.sqrt(max(s2 * cov_unscaled[1, 1], 0.0)))
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(w * res**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(b), float(a), stderr, r2, res, n)


def fit_loglog_slope(points: Sequence[tuple[float, float, float]]) -> LinearFit:
    """Weighted fit of ``log y`` against ``log x``; CIs enter through ``ci / y``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 points")
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    x, y, ci = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    sigma = ci / y if np.all(ci > 0) else None
    return weighted_linear_fit(np.log(x), np.log(y), sigma)
