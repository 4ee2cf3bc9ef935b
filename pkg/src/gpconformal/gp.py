"""Ordinary kriging (zero prior mean) with Matérn kernels.

Hyperparameters ``(sigma2, theta)`` are estimated by minimising

    y^T K_eps^{-1} y + log det K_eps

with a multi-start Nelder-Mead search in log-parameter space.  The nugget is
never estimated: it is supplied by the caller and held fixed.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack
from scipy.spatial.distance import cdist
from scipy.stats import norm, qmc

from .intervals import IntervalSet
from .kernels import (
    KernelSpec,
    _as_points,
    cross_matrix,
    gram_matrix,
    matern_from_distance,
    nugget_diagonal,
)

__all__ = [
    "StandardizationWarning",
    "MleSettings",
    "FittedGP",
    "factorize",
    "condition",
    "neg_log_likelihood",
    "fit",
    "posterior_mean",
    "posterior_std",
    "credibility_interval",
]

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
# Zero-nugget fits on distinct inputs reject hyperparameters with cond(K) above 1e12.
MIN_RCOND = 1e-12


class StandardizationWarning(UserWarning):
    """Inputs passed to :func:`fit` do not look standardized."""


@dataclass(frozen=True)
class MleSettings:
    """Search settings for the likelihood optimisation.

    ``sigma2_bounds`` is relative: the search interval is
    ``sigma2_bounds * mean(y**2)`` (or ``* 1`` for all-zero data).
    """

    theta_bounds: tuple = (1e-2, 1e2)
    sigma2_bounds: tuple = (1e-6, 1e3)
    n_restarts: int = 10
    max_iters: int = 2000
    seed: int = 0
    anisotropic: bool = False
    profile_sigma2: bool = False

    def __post_init__(self):
        for name in ("theta_bounds", "sigma2_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo < hi):
                raise ValueError(f"{name} must be finite with 0 < lower < upper")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class FittedGP:
    """GP posterior conditioned on training data at fixed hyperparameters."""

    spec: KernelSpec
    X_train: np.ndarray
    y_train: np.ndarray
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0
    objective: float = field(default=np.nan)

    @property
    def n(self) -> int:
        return self.X_train.shape[0]

    def mean(self, X_star) -> np.ndarray:
        return posterior_mean(self, X_star)

    def std(self, X_star) -> np.ndarray:
        return posterior_std(self, X_star)


def factorize(K: np.ndarray, sigma2: float):
    """Cholesky factor of ``K``, escalating a diagonal jitter on failure.

    Returns ``(L, jitter)``.  Jitter starts at ``1e-10 * sigma2`` and is
    multiplied by 10 up to ``1e-4 * sigma2``.
    """
    try:
        return linalg.cholesky(K, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_START * sigma2
    while jitter <= JITTER_MAX * sigma2 * (1 + 1e-9):
        try:
            Kj = K + jitter * np.eye(K.shape[0])
            return linalg.cholesky(Kj, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise linalg.LinAlgError("Gram matrix is not positive definite even with jitter")


def _check_xy(X, y):
    X = _as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return X, y


def condition(spec: KernelSpec, X, y, objective: float = np.nan) -> FittedGP:
    """Condition the prior on ``(X, y)`` without touching hyperparameters."""
    X, y = _check_xy(X, y)
    K = gram_matrix(spec, X, with_nugget=True)
    L, jitter = factorize(K, spec.sigma2)
    w = linalg.cho_solve((L, True), y, check_finite=False)
    if jitter:
        logger.debug("factorization needed jitter %.3g", jitter)
    return FittedGP(spec=spec, X_train=X, y_train=y, chol=L, weights=w,
                    jitter=jitter, objective=objective)


def _nll_from_gram(K, y, sigma2, allow_jitter=True):
    try:
        if allow_jitter:
            L, _ = factorize(K, sigma2)
        else:
            L = linalg.cholesky(K, lower=True, check_finite=False)
            # A factorization that only succeeds by round-off would need jitter
            # once the matrix is rebuilt, so demand a usable condition number.
            rcond, info = lapack.dpocon(L.T, np.abs(K).sum(axis=0).max())
            if info != 0 or rcond < MIN_RCOND:
                return np.inf
    except linalg.LinAlgError:
        return np.inf
    alpha = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    val = float(alpha @ alpha + 2.0 * np.sum(np.log(np.diag(L))))
    return val if np.isfinite(val) else np.inf


def neg_log_likelihood(spec: KernelSpec, X, y) -> float:
    """``y^T K_eps^{-1} y + log det K_eps``; ``+inf`` if K_eps cannot be factored."""
    X, y = _check_xy(X, y)
    return _nll_from_gram(gram_matrix(spec, X, with_nugget=True), y, spec.sigma2)


def _warn_if_not_standardized(X):
    if X.shape[0] < 3:
        return
    sd = X.std(axis=0)
    if np.any(np.abs(sd - 1.0) > 0.25):
        warnings.warn("input columns do not look standardized (std far from 1); "
                      "length-scale bounds assume standardized inputs",
                      StandardizationWarning, stacklevel=3)


class _Objective:
    """NLL in log-parameters with the pairwise geometry cached."""

    def __init__(self, X, y, nu, nugget, nugget_mode, anisotropic):
        self.y = y
        self.n, self.d = X.shape
        self.anisotropic = anisotropic
        if anisotropic:
            self.sqdiff = (X[:, None, :] - X[None, :, :]) ** 2
        else:
            self.dist = cdist(X, X)
        self.template = KernelSpec(nu=nu, sigma2=1.0, theta=(1.0,), nugget=nugget,
                                   nugget_mode=nugget_mode)
        self.diag = nugget_diagonal(self.template)
        # Jitter is reserved for repeated inputs; with distinct inputs and no
        # nugget, hyperparameters that need it are rejected.
        n_unique = np.unique(X, axis=0).shape[0]
        self.allow_jitter = self.diag > 0 or n_unique < self.n
        self.n_evals = 0

    def correlation(self, theta):
        if self.anisotropic:
            r = np.sqrt(self.sqdiff @ (1.0 / theta ** 2))
        else:
            r = self.dist / theta[0]
        R = matern_from_distance(self.template, r)
        np.fill_diagonal(R, 1.0)
        return R

    def full(self, params):
        return np.asarray(params)

    def __call__(self, params):
        sigma2 = np.exp(params[0])
        theta = np.exp(params[1:])
        K = sigma2 * self.correlation(theta)
        K[np.diag_indices_from(K)] += self.diag
        self.n_evals += 1
        return _nll_from_gram(K, self.y, sigma2, self.allow_jitter)

    def profile_sigma2(self, theta, bounds):
        R = self.correlation(theta)
        try:
            L, _ = factorize(R, 1.0)
        except linalg.LinAlgError:
            return bounds[0]
        a = linalg.solve_triangular(L, self.y, lower=True, check_finite=False)
        return float(np.clip(a @ a / self.n, *bounds))


def _data_scale(y):
    s = float(np.mean(y ** 2))
    return s if s > 0 else 1.0


def _better(cand, best):
    """Smaller objective wins; ties within 1e-12 go to the smaller length-scales."""
    if best is None:
        return True
    if cand[0] < best[0] - 1e-12:
        return True
    if abs(cand[0] - best[0]) <= 1e-12:
        return float(np.sum(cand[1][1:])) < float(np.sum(best[1][1:]))
    return False


def fit(X, y, nu: float, nugget: float = 0.0,
        settings: Optional[MleSettings] = None,
        nugget_mode: str = "sd_on_diagonal",
        start: Optional[KernelSpec] = None) -> FittedGP:
    """Fit a zero-mean Matérn GP by maximum likelihood.

    Parameters
    ----------
    X : array-like of shape (n, d)
        Standardized inputs.
    y : array-like of shape (n,)
        Outputs.
    nu : float
        Matérn regularity, a half-integer.
    nugget : float
        Fixed noise level σ_ε (see ``nugget_mode``).
    settings : MleSettings, optional
    start : KernelSpec, optional
        Use this spec as the single starting point instead of the
        Latin-hypercube starts.

    Returns
    -------
    FittedGP

    Notes
    -----
    With no nugget and distinct inputs, hyperparameters whose Gram matrix has
    an estimated condition number above 1e12 are treated as infeasible, so the
    returned model interpolates without jitter.
    """
    settings = settings or MleSettings()
    X, y = _check_xy(X, y)
    n, d = X.shape
    if n < 2:
        raise ValueError("fit needs at least 2 training points")
    _warn_if_not_standardized(X)

    obj = _Objective(X, y, nu, nugget, nugget_mode, settings.anisotropic)
    scale = _data_scale(y)
    s2_lo, s2_hi = (b * scale for b in settings.sigma2_bounds)
    k_theta = d if settings.anisotropic else 1
    bounds = [(np.log(s2_lo), np.log(s2_hi))] + [tuple(np.log(settings.theta_bounds))] * k_theta
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    if start is not None:
        theta0 = start.theta_for(d) if settings.anisotropic else np.array([np.mean(start.theta)])
        starts = np.concatenate([[np.log(start.sigma2)], np.log(theta0)])[None, :]
        starts = np.clip(starts, lo, hi)
    else:
        sampler = qmc.LatinHypercube(d=len(bounds), rng=np.random.default_rng(settings.seed))
        starts = qmc.scale(sampler.random(settings.n_restarts), lo, hi)

    if settings.profile_sigma2 and nugget == 0.0:
        fun = _ProfiledObjective(obj, (s2_lo, s2_hi))
        starts_fun, lo_f, hi_f = starts[:, 1:], lo[1:], hi[1:]
    else:
        fun = obj
        starts_fun, lo_f, hi_f = starts, lo, hi

    # Objective round-off grows with |f| near ill-conditioned optima.
    f_ref = min((abs(v) for v in map(fun, starts_fun) if np.isfinite(v)), default=1.0)
    options = dict(maxiter=settings.max_iters, maxfev=settings.max_iters,
                   xatol=1e-6, fatol=1e-10 * max(1.0, f_ref))
    fbounds = list(zip(lo_f, hi_f))
    best = None
    def minimize(x0):
        # Rejected vertices evaluate to +inf; the simplex spread check then
        # computes inf - inf, which is harmless.
        with np.errstate(invalid="ignore"):
            return optimize.minimize(fun, x0, method="Nelder-Mead", bounds=fbounds,
                                     options=options)

    for x0 in starts_fun:
        res = minimize(x0)
        cand = (float(res.fun), fun.full(res.x), res.x)
        if np.isfinite(cand[0]) and _better(cand, best):
            best = cand
    if best is None:
        raise RuntimeError("likelihood optimisation failed: no start gave a finite objective")

    # Restart from the incumbent until the objective stops moving.
    for _ in range(10):
        res = minimize(best[2])
        if not res.fun < best[0] - 1e-12:
            break
        best = (float(res.fun), fun.full(res.x), res.x)

    params = best[1]
    # exp(log(bound)) can overshoot the bound by an ulp.
    sigma2 = float(np.clip(np.exp(params[0]), s2_lo, s2_hi))
    theta = tuple(np.clip(np.exp(params[1:]), *settings.theta_bounds))
    spec = KernelSpec(nu=nu, sigma2=sigma2, theta=theta, nugget=nugget,
                      nugget_mode=nugget_mode)
    logger.debug("MLE nu=%s: %d objective evaluations", nu, obj.n_evals)
    return condition(spec, X, y, objective=best[0])


class _ProfiledObjective:
    """Objective in log-theta only, with sigma2 at its closed-form optimum (nugget 0)."""

    def __init__(self, obj, s2_bounds):
        self.obj = obj
        self.s2_bounds = s2_bounds

    def full(self, log_theta):
        s2 = self.obj.profile_sigma2(np.exp(log_theta), self.s2_bounds)
        return np.concatenate([[np.log(s2)], log_theta])

    def __call__(self, log_theta):
        return self.obj(self.full(log_theta))


def posterior_mean(gp: FittedGP, X_star) -> np.ndarray:
    Xs = _as_points(X_star, "X_star")
    if Xs.shape[0] == 0:
        return np.zeros(0)
    if Xs.shape[1] != gp.X_train.shape[1]:
        raise ValueError("dimension mismatch between X_star and training inputs")
    return cross_matrix(gp.spec, gp.X_train, Xs) @ gp.weights


def _posterior_var(gp: FittedGP, Ks: np.ndarray) -> np.ndarray:
    v = linalg.solve_triangular(gp.chol, Ks.T, lower=True, check_finite=False)
    return gp.spec.sigma2 - np.sum(v * v, axis=0)


def posterior_std(gp: FittedGP, X_star) -> np.ndarray:
    Xs = _as_points(X_star, "X_star")
    if Xs.shape[0] == 0:
        return np.zeros(0)
    if Xs.shape[1] != gp.X_train.shape[1]:
        raise ValueError("dimension mismatch between X_star and training inputs")
    var = _posterior_var(gp, cross_matrix(gp.spec, gp.X_train, Xs))
    return np.sqrt(np.maximum(var, 0.0))


def credibility_interval(gp: FittedGP, X_star, alpha: float) -> IntervalSet:
    """Gaussian credibility interval ``mean ± u_{1-alpha/2} * std``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    mean = posterior_mean(gp, X_star)
    half = norm.ppf(1.0 - alpha / 2.0) * posterior_std(gp, X_star)
    return IntervalSet(lower=mean - half, upper=mean + half, method="credibility",
                       alpha=alpha, kernel_nu=gp.spec.nu)
