"""Interval quality metrics and model-selection rules.

Coverage, average width, Spearman correlation between interval width and
absolute surrogate error (with a bootstrap), predictivity Q^2, MSE, and
the Beta soft coverage threshold used to decide whether a method "passes"
at a given nominal level.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .intervals import IntervalSet

__all__ = [
    "NotComputable",
    "EvalRecord",
    "empirical_coverage",
    "average_width",
    "spearman_width_error",
    "spearman",
    "bootstrap_spearman",
    "predictivity_q2",
    "mse",
    "betainc_regularized",
    "beta_quantile",
    "beta_soft_threshold",
    "select_best",
]


class NotComputable(ValueError):
    """A statistic is undefined for the given data (reported as "n.c")."""


@dataclass
class EvalRecord:
    method: str
    nu: float
    beta_power: Optional[float]
    alpha: float
    coverage: float
    avg_width: float
    width_infinite_count: int
    spearman_median: Optional[float]
    spearman_ci: Optional[tuple]
    q2: float
    mse: float
    passes_soft_threshold: bool
    threshold: float = float("nan")
    spearman_point: Optional[float] = None
    bootstrap_skipped: int = 0
    bootstrap_samples: list = field(default_factory=list, repr=False)

    def to_dict(self, with_samples: bool = True) -> dict:
        d = asdict(self)
        if d["spearman_ci"] is not None:
            d["spearman_ci"] = list(d["spearman_ci"])
        if not with_samples:
            d.pop("bootstrap_samples")
        return d


def _interval_arrays(intervals, y=None):
    if isinstance(intervals, IntervalSet):
        lower, upper = intervals.lower, intervals.upper
    else:
        lower, upper = (np.asarray(a, dtype=float) for a in intervals)
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        if y.size != lower.size:
            raise ValueError(f"length mismatch: {lower.size} intervals, {y.size} targets")
    return lower, upper, y


def empirical_coverage(intervals, y_test) -> float:
    """Fraction of targets inside their closed interval."""
    lower, upper, y = _interval_arrays(intervals, y_test)
    if y.size == 0:
        raise ValueError("coverage needs at least one test point")
    return float(np.mean((lower <= y) & (y <= upper)))


def average_width(intervals) -> tuple:
    """``(mean finite width, number of infinite-width points)``."""
    lower, upper, _ = _interval_arrays(intervals)
    w = upper - lower
    finite = np.isfinite(w)
    avg = float(np.mean(w[finite])) if finite.any() else float("inf")
    return avg, int((~finite).sum())


def spearman(a, b) -> float:
    """Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3:
        raise NotComputable("Spearman correlation needs at least 3 pairs")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        raise NotComputable("zero rank variance")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


def _finite_pairs(intervals, abs_errors):
    lower, upper, err = _interval_arrays(intervals, abs_errors)
    w = upper - lower
    keep = np.isfinite(w) & np.isfinite(err)
    return w[keep], err[keep], int((~keep).sum())


def spearman_width_error(intervals, abs_errors) -> float:
    """Rank correlation between interval widths and absolute errors.

    Infinite-width points are dropped; raises :class:`NotComputable` with
    fewer than 3 remaining pairs or a constant ranking.
    """
    w, err, _ = _finite_pairs(intervals, abs_errors)
    return spearman(w, err)


def _batched_spearman(W, E):
    rw = rankdata(W, axis=1)
    re = rankdata(E, axis=1)
    rw -= rw.mean(axis=1, keepdims=True)
    re -= re.mean(axis=1, keepdims=True)
    num = np.sum(rw * re, axis=1)
    den = np.sqrt(np.sum(rw * rw, axis=1) * np.sum(re * re, axis=1))
    out = np.full(W.shape[0], np.nan)
    ok = den > 0
    out[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    return out


def bootstrap_indices(m: int, n_boot: int, seed: int) -> np.ndarray:
    """Resample index table; row ``b`` depends only on ``(seed, b)``."""
    return np.stack([np.random.default_rng([seed, b]).integers(0, m, size=m)
                     for b in range(n_boot)])


def bootstrap_spearman(intervals, abs_errors, n_boot: int = 999, seed: int = 0):
    """Bootstrap distribution of the width/error Spearman correlation.

    Returns
    -------
    median : float
    ci : tuple
        2.5 and 97.5 percentiles.
    samples : list of float
        Correlations of the non-degenerate resamples.
    skipped : int
        Number of resamples with a constant ranking.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    w, err, _ = _finite_pairs(intervals, abs_errors)
    m = w.size
    if m < 3:
        raise NotComputable("Spearman bootstrap needs at least 3 finite pairs")
    idx = bootstrap_indices(m, n_boot, seed)
    rs = _batched_spearman(w[idx], err[idx])
    ok = np.isfinite(rs)
    if not ok.any():
        raise NotComputable("every bootstrap resample has zero rank variance")
    samples = rs[ok]
    lo, hi = np.percentile(samples, [2.5, 97.5])
    return float(np.median(samples)), (float(lo), float(hi)), samples.tolist(), int((~ok).sum())


def predictivity_q2(y_test, predictions) -> float:
    """``1 - sum((y - pred)^2) / sum((y - mean(y))^2)``."""
    y = np.asarray(y_test, dtype=float).ravel()
    p = np.asarray(predictions, dtype=float).ravel()
    if y.size != p.size:
        raise ValueError("length mismatch")
    if y.size < 2:
        raise ValueError("Q2 needs at least 2 test points")
    ss = float(np.sum((y - y.mean()) ** 2))
    if ss == 0.0:
        raise ValueError("zero variance in test targets")
    return 1.0 - float(np.sum((y - p) ** 2)) / ss


def mse(y_test, predictions) -> float:
    y = np.asarray(y_test, dtype=float).ravel()
    p = np.asarray(predictions, dtype=float).ravel()
    if y.size != p.size:
        raise ValueError("length mismatch")
    return float(np.mean((y - p) ** 2))


def _betacf(a, b, x, max_iter=10000, eps=1e-15):
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_quantile(q: float, a: float, b: float, tol: float = 1e-12) -> float:
    """Quantile of Beta(a, b) by bisection on :func:`betainc_regularized`."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if betainc_regularized(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_soft_threshold(n_train: int, alpha: float, upsilon: float = 0.1) -> float:
    """Coverage a method must reach to be considered valid at level ``1 - alpha``.

    The ``upsilon``-quantile of Beta(n + 1 - l, l) with l = floor((n + 1) alpha).
    For l = 0 the law is a point mass at 1 and the threshold falls back to
    ``1 - alpha``.
    """
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 < upsilon < 1.0:
        raise ValueError(f"upsilon must lie in (0, 1), got {upsilon}")
    ell = int(math.floor((n_train + 1) * alpha + 1e-9))
    if ell == 0:
        return 1.0 - alpha
    return beta_quantile(upsilon, n_train + 1 - ell, ell)


def select_best(records: Sequence[EvalRecord], alpha: float):
    """Among records at ``alpha`` that pass the soft threshold, pick the
    narrowest and the most width/error-correlated.

    Returns ``(min_width_record, max_spearman_record)``; either is ``None``
    when nothing qualifies.
    """
    passing = [r for r in records
               if math.isclose(r.alpha, alpha) and r.passes_soft_threshold]
    finite = [r for r in passing if math.isfinite(r.avg_width)]
    best_width = min(finite, key=lambda r: r.avg_width) if finite else None
    corr = [r for r in passing if r.spearman_median is not None]
    best_corr = max(corr, key=lambda r: r.spearman_median) if corr else None
    return best_width, best_corr
