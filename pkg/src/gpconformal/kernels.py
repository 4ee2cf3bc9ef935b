"""Matérn covariance functions and Gram-matrix assembly.

Half-integer regularities ``nu = p + 1/2`` are evaluated through the exact
polynomial-times-exponential expansion

.. math::
    K(r) = \\sigma^2 \\exp(-\\sqrt{2\\nu} r) \\frac{p!}{(2p)!}
           \\sum_{i=0}^{p} \\frac{(p+i)!}{i!(p-i)!} (2\\sqrt{2\\nu} r)^{p-i}

where ``r`` is the length-scale-scaled Euclidean distance.  The general
Bessel form is kept in :func:`matern_bessel` as a reference implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gamma, kv

__all__ = [
    "NUGGET_MODES",
    "KernelSpec",
    "matern_eval",
    "matern_from_distance",
    "matern_bessel",
    "scaled_distance",
    "gram_matrix",
    "cross_vector",
    "cross_matrix",
    "nugget_diagonal",
]

NUGGET_MODES = ("sd_on_diagonal", "variance_on_diagonal")


def _as_half_integer(nu) -> Fraction:
    frac = Fraction(nu).limit_denominator(4)
    if abs(float(frac) - float(nu)) > 1e-12 or frac.denominator != 2 or frac <= 0:
        raise ValueError(f"nu must be a positive half-integer (2k+1)/2, got {nu!r}")
    return frac


@dataclass(frozen=True)
class KernelSpec:
    """Hyperparameters of a Matérn-``nu`` covariance.

    ``theta`` is stored as a tuple with one length-scale per input
    dimension; a length-1 tuple is broadcast to any dimension (isotropic).
    ``nugget`` is the noise level σ_ε; how it enters the Gram diagonal is
    set by ``nugget_mode``.
    """

    nu: float
    sigma2: float
    theta: tuple = (1.0,)
    nugget: float = 0.0
    nugget_mode: str = "sd_on_diagonal"
    _p: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 1 or theta.size == 0:
            raise ValueError("theta must be a scalar or a 1-d sequence")
        object.__setattr__(self, "theta", tuple(float(t) for t in theta))
        frac = _as_half_integer(self.nu)
        object.__setattr__(self, "nu", float(frac))
        object.__setattr__(self, "_p", int(frac - Fraction(1, 2)))
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not all(np.isfinite(t) and t > 0 for t in self.theta):
            raise ValueError(f"theta components must be positive, got {self.theta}")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ValueError(f"nugget must be non-negative, got {self.nugget}")
        if self.nugget_mode not in NUGGET_MODES:
            raise ValueError(f"nugget_mode must be one of {NUGGET_MODES}")

    @property
    def isotropic(self) -> bool:
        return len(self.theta) == 1

    def theta_for(self, d: int) -> np.ndarray:
        if self.isotropic:
            return np.full(d, self.theta[0])
        if len(self.theta) != d:
            raise ValueError(
                f"dimension mismatch: kernel has {len(self.theta)} length-scales, "
                f"points have dimension {d}")
        return np.asarray(self.theta)

    def with_params(self, **kwargs) -> "KernelSpec":
        return replace(self, **kwargs)


def nugget_diagonal(spec: KernelSpec) -> float:
    """Value added to the Gram diagonal for the spec's nugget."""
    if spec.nugget_mode == "sd_on_diagonal":
        return spec.nugget
    return spec.nugget ** 2


def _as_points(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    elif X.ndim != 2:
        raise ValueError(f"{name} must be a point set of shape (n, d)")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return X


def _as_point(x, d=None) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError("a single point must be a 1-d vector")
    if d is not None and x.size != d:
        raise ValueError(f"dimension mismatch: point has dimension {x.size}, expected {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point contains non-finite coordinates")
    return x


def _half_integer_coefficients(p: int) -> np.ndarray:
    """Coefficients c_k of (sqrt(2 nu) r)^k in the expansion, k = 0..p."""
    coef = np.zeros(p + 1)
    scale = math.factorial(p) / math.factorial(2 * p)
    for i in range(p + 1):
        k = p - i
        coef[k] = (scale * math.factorial(p + i)
                   / (math.factorial(i) * math.factorial(p - i)) * 2.0 ** k)
    return coef


def matern_from_distance(spec: KernelSpec, r) -> np.ndarray:
    """Matérn covariance as a function of the scaled distance ``r``."""
    r = np.asarray(r, dtype=float)
    s = math.sqrt(2.0 * spec.nu) * r
    coef = _half_integer_coefficients(spec._p)
    poly = np.polynomial.polynomial.polyval(s, coef)
    return spec.sigma2 * poly * np.exp(-s)


def matern_bessel(nu: float, sigma2: float, r) -> np.ndarray:
    """General Matérn form through the modified Bessel function K_nu.

    Valid for any ``nu > 0``; ``r = 0`` returns ``sigma2``.
    """
    r = np.asarray(r, dtype=float)
    s = np.sqrt(2.0 * nu) * r
    with np.errstate(invalid="ignore", over="ignore"):
        out = sigma2 * 2.0 ** (1.0 - nu) / gamma(nu) * s ** nu * kv(nu, s)
    return np.where(r == 0, sigma2, np.nan_to_num(out, nan=0.0))


def scaled_distance(spec: KernelSpec, X, Y) -> np.ndarray:
    X = _as_points(X, "X")
    Y = _as_points(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    theta = spec.theta_for(X.shape[1])
    return cdist(X / theta, Y / theta)


def matern_eval(spec: KernelSpec, x, xp) -> float:
    """Covariance between two points."""
    x = _as_point(x)
    xp = _as_point(xp, x.size)
    theta = spec.theta_for(x.size)
    r = float(np.sqrt(np.sum(((x - xp) / theta) ** 2)))
    if r == 0.0:
        return float(spec.sigma2)
    return float(matern_from_distance(spec, r))


def gram_matrix(spec: KernelSpec, X, with_nugget: bool = False) -> np.ndarray:
    X = _as_points(X)
    K = matern_from_distance(spec, scaled_distance(spec, X, X))
    np.fill_diagonal(K, spec.sigma2)
    # cdist round-off can break exact symmetry
    K = 0.5 * (K + K.T)
    if with_nugget:
        K[np.diag_indices_from(K)] += nugget_diagonal(spec)
    return K


def cross_matrix(spec: KernelSpec, X, Xs) -> np.ndarray:
    """Matrix of covariances K(Xs_j, X_i), shape (m, n); no nugget."""
    r = scaled_distance(spec, Xs, X)
    K = matern_from_distance(spec, r)
    K[r == 0.0] = spec.sigma2
    return K


def cross_vector(spec: KernelSpec, X, x) -> np.ndarray:
    X = _as_points(X)
    x = _as_point(x, X.shape[1])
    return cross_matrix(spec, X, x[None, :])[0]
