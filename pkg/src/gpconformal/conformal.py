"""Cross-conformal prediction intervals built on a LOO ensemble.

Order-statistic conventions, for n values and miscoverage ``alpha``:

* ``q_plus``  -- the ceil((1 - alpha)(n + 1))-th smallest value, +inf past n;
* ``q_minus`` -- the floor(alpha (n + 1))-th smallest value, -inf at index 0.

Every constructor returns an :class:`~gpconformal.intervals.IntervalSet`.
"""
from __future__ import annotations

import math

import numpy as np

from .intervals import IntervalSet
from .loo import LooEnsemble

__all__ = [
    "q_plus_index",
    "q_minus_index",
    "q_plus",
    "q_minus",
    "jackknife",
    "jackknife_plus",
    "jackknife_minmax",
    "jplus_gp",
    "jminmax_gp",
    "METHODS",
]

# Float slack so that e.g. (1 - 0.2) * 5 = 4.000000000000001 still ceils to 4.
_EPS = 1e-9


def q_plus_index(n: int, alpha: float) -> int:
    """1-based rank used by :func:`q_plus`."""
    return int(math.ceil((1.0 - alpha) * (n + 1) - _EPS))


def q_minus_index(n: int, alpha: float) -> int:
    """1-based rank used by :func:`q_minus`."""
    return int(math.floor(alpha * (n + 1) + _EPS))


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _kth_smallest(values: np.ndarray, k: int, axis: int = 0) -> np.ndarray:
    n = values.shape[axis]
    if n == 0:
        raise ValueError("empirical quantile of an empty collection")
    shape = list(values.shape)
    del shape[axis]
    if k > n:
        return np.full(shape, np.inf) if shape else np.inf
    if k < 1:
        return np.full(shape, -np.inf) if shape else -np.inf
    return np.take(np.partition(values, k - 1, axis=axis), k - 1, axis=axis)


def q_plus(values, alpha: float, axis: int = 0):
    """Upper empirical quantile (``+inf`` when the rank exceeds n)."""
    _check_alpha(alpha)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = values.reshape(1)
    k = q_plus_index(values.shape[axis], alpha)
    out = _kth_smallest(values, k, axis)
    return float(out) if np.ndim(out) == 0 else out


def q_minus(values, alpha: float, axis: int = 0):
    """Lower empirical quantile (``-inf`` when the rank is 0)."""
    _check_alpha(alpha)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = values.reshape(1)
    k = q_minus_index(values.shape[axis], alpha)
    out = _kth_smallest(values, k, axis)
    return float(out) if np.ndim(out) == 0 else out


def _check_plus_ranks(n: int, alpha: float):
    # Past this point the lower rank overtakes the upper one and the
    # interval can be empty; this only happens for alpha > 1/2.
    _check_alpha(alpha)
    if q_minus_index(n, alpha) > q_plus_index(n, alpha):
        raise ValueError(f"alpha={alpha} is too large for n={n}: the lower order statistic "
                         f"rank exceeds the upper one")


def jackknife(gp_mean_at_test, loo: LooEnsemble, alpha: float) -> IntervalSet:
    """Jackknife interval centred on the full-data prediction.

    Constant width ``2 * q_plus(residuals)``; carries no finite-sample
    coverage guarantee.
    """
    mean = np.asarray(gp_mean_at_test, dtype=float).ravel()
    if mean.size != loo.m:
        raise ValueError("gp_mean_at_test must have one entry per test point")
    half = q_plus(loo.loo_residual, alpha)
    return IntervalSet(mean - half, mean + half, method="jackknife", alpha=alpha,
                       kernel_nu=loo.nu)


def jackknife_plus(loo: LooEnsemble, alpha: float) -> IntervalSet:
    _check_plus_ranks(loo.n, alpha)
    r = loo.loo_residual[:, None]
    mu = loo.loo_mean_at_test
    lower = q_minus(mu - r, alpha, axis=0)
    upper = q_plus(mu + r, alpha, axis=0)
    return IntervalSet(np.atleast_1d(lower), np.atleast_1d(upper), method="jackknife+",
                       alpha=alpha, kernel_nu=loo.nu)


def jackknife_minmax(loo: LooEnsemble, alpha: float) -> IntervalSet:
    half = q_plus(loo.loo_residual, alpha)
    mu = loo.loo_mean_at_test
    return IntervalSet(mu.min(axis=0) - half, mu.max(axis=0) + half,
                       method="jackknife-minmax", alpha=alpha, kernel_nu=loo.nu)


def jplus_gp(loo: LooEnsemble, alpha: float) -> IntervalSet:
    """Jackknife+ with offsets rescaled by the LOO posterior std at the test point."""
    _check_plus_ranks(loo.n, alpha)
    offset = loo.loo_score_gamma[:, None] * loo.test_weights()
    mu = loo.loo_mean_at_test
    lower = q_minus(mu - offset, alpha, axis=0)
    upper = q_plus(mu + offset, alpha, axis=0)
    return IntervalSet(np.atleast_1d(lower), np.atleast_1d(upper), method="J+GP",
                       alpha=alpha, kernel_nu=loo.nu, beta_power=loo.beta_power)


def jminmax_gp(loo: LooEnsemble, alpha: float, literal: bool = False) -> IntervalSet:
    """Min/max of the LOO means widened by the weighted-score quantile.

    With ``literal=True`` the upper edge uses the unweighted residuals in
    place of the Gaussian scores, as in the original display.
    """
    weights = loo.test_weights()
    mu = loo.loo_mean_at_test
    lower_half = q_plus(loo.loo_score_gamma[:, None] * weights, alpha, axis=0)
    if literal:
        upper_half = q_plus(loo.loo_residual[:, None] * weights, alpha, axis=0)
    else:
        upper_half = lower_half
    return IntervalSet(mu.min(axis=0) - lower_half, mu.max(axis=0) + upper_half,
                       method="J-minmax-GP", alpha=alpha, kernel_nu=loo.nu,
                       beta_power=loo.beta_power)


# Method tag -> (constructor, uses beta)
METHODS = {
    "jackknife": (jackknife, False),
    "jackknife+": (jackknife_plus, False),
    "jackknife-minmax": (jackknife_minmax, False),
    "J+GP": (jplus_gp, True),
    "J-minmax-GP": (jminmax_gp, True),
}
