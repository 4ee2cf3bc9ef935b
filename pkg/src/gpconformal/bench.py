"""Analytic test functions, input samplers and design-of-experiments helpers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Uniform",
    "Normal",
    "Triangular",
    "MultivariateNormal",
    "SyntheticProblem",
    "Standardizer",
    "morokoff_caflisch",
    "wing_weight",
    "sample_doe",
    "standardize",
    "morokoff_inputs",
    "wing_weight_inputs",
    "tpd_inputs",
    "FUNCTIONS",
    "RNG_ID",
]

RNG_ID = f"numpy.random.PCG64 (numpy {np.__version__})"


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"uniform bounds need a < b, got ({self.a}, {self.b})")

    dim = 1

    def sample(self, rng, size):
        return rng.uniform(self.a, self.b, size=size)

    def mean(self):
        return 0.5 * (self.a + self.b)

    def std(self):
        return (self.b - self.a) / np.sqrt(12.0)


@dataclass(frozen=True)
class Normal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"normal sigma must be positive, got {self.sigma}")

    dim = 1

    def sample(self, rng, size):
        return rng.normal(self.mu, self.sigma, size=size)

    def mean(self):
        return self.mu

    def std(self):
        return self.sigma


@dataclass(frozen=True)
class Triangular:
    """Triangular law on ``[a, c]`` with mode ``b``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c and self.a < self.c):
            raise ValueError(f"triangular needs a <= b <= c and a < c, got "
                             f"({self.a}, {self.b}, {self.c})")

    dim = 1

    def ppf(self, u):
        a, b, c = self.a, self.b, self.c
        u = np.asarray(u, dtype=float)
        split = (b - a) / (c - a)
        left = a + np.sqrt(u * (c - a) * (b - a))
        right = c - np.sqrt((1.0 - u) * (c - a) * (c - b))
        return np.where(u < split, left, right)

    def cdf(self, x):
        a, b, c = self.a, self.b, self.c
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            left = (x - a) ** 2 / ((c - a) * (b - a))
            right = 1.0 - (c - x) ** 2 / ((c - a) * (c - b))
        out = np.where(x <= b, left, right)
        return np.clip(np.where(x <= a, 0.0, np.where(x >= c, 1.0, out)), 0.0, 1.0)

    def sample(self, rng, size):
        return self.ppf(rng.random(size))

    def mean(self):
        return (self.a + self.b + self.c) / 3.0

    def std(self):
        a, b, c = self.a, self.b, self.c
        return np.sqrt((a * a + b * b + c * c - a * b - a * c - b * c) / 18.0)


@dataclass(frozen=True)
class MultivariateNormal:
    mean_vector: tuple
    covariance: tuple

    def __post_init__(self):
        mu = np.asarray(self.mean_vector, dtype=float)
        C = np.asarray(self.covariance, dtype=float)
        if C.shape != (mu.size, mu.size) or not np.allclose(C, C.T):
            raise ValueError("covariance must be a symmetric matrix matching the mean")
        try:
            np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc

    @property
    def dim(self):
        return len(self.mean_vector)

    def sample(self, rng, size):
        L = np.linalg.cholesky(np.asarray(self.covariance, dtype=float))
        z = rng.standard_normal((size, self.dim))
        return np.asarray(self.mean_vector) + z @ L.T

    def mean(self):
        return np.asarray(self.mean_vector, dtype=float)

    def std(self):
        return np.sqrt(np.diag(np.asarray(self.covariance, dtype=float)))


InputDistribution = Union[Uniform, Normal, Triangular, MultivariateNormal]


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def morokoff_caflisch(x) -> Union[float, np.ndarray]:
    """``0.5 (1 + 1/d)^d prod_i x_i^(1/d)`` on the unit cube.

    Accepts one point or an ``(N, d)`` array.  Coordinates outside [0, 1]
    are clamped with a warning.
    """
    single = np.ndim(x) == 1
    X = _rows(x)
    d = X.shape[1]
    if d == 0:
        raise ValueError("Morokoff-Caflisch needs d >= 1")
    if np.any((X < 0) | (X > 1)):
        warnings.warn("Morokoff-Caflisch inputs clamped to the unit cube", RuntimeWarning,
                      stacklevel=2)
        X = np.clip(X, 0.0, 1.0)
    out = 0.5 * (1.0 + 1.0 / d) ** d * np.prod(X ** (1.0 / d), axis=1)
    return float(out[0]) if single else out


WING_WEIGHT_BOX = (
    (150.0, 200.0), (220.0, 300.0), (6.0, 10.0), (-10.0, 10.0), (16.0, 45.0),
    (0.5, 1.0), (0.08, 0.18), (2.5, 6.0), (1700.0, 2500.0), (0.025, 0.08),
)


def wing_weight(x) -> Union[float, np.ndarray]:
    """Light-aircraft wing weight; the sweep angle (4th input) is in degrees."""
    single = np.ndim(x) == 1
    X = _rows(x)
    if X.shape[1] != 10:
        raise ValueError("wing-weight takes 10 inputs")
    box = np.asarray(WING_WEIGHT_BOX)
    if np.any((X < box[:, 0]) | (X > box[:, 1])):
        warnings.warn("wing-weight input outside its nominal domain", RuntimeWarning,
                      stacklevel=2)
    sw, wfw, A, lam, q, tr, tc, nz, wdg, wp = X.T
    cl = np.cos(np.deg2rad(lam))
    out = (0.036 * sw ** 0.758 * wfw ** 0.0035 * (A / cl ** 2) ** 0.6 * q ** 0.006
           * tr ** 0.04 * (100.0 * tc / cl) ** -0.3 * (nz * wdg) ** 0.49 + sw * wp)
    return float(out[0]) if single else out


FUNCTIONS: dict = {
    "morokoff_caflisch": morokoff_caflisch,
    "wing_weight": wing_weight,
}


def morokoff_inputs(d: int = 10) -> list:
    return [Uniform(0.0, 1.0) for _ in range(d)]


def wing_weight_inputs() -> list:
    return [Uniform(a, b) for a, b in WING_WEIGHT_BOX]


def tpd_inputs() -> list:
    """Input laws of the 7-parameter clogging-code dataset (function not included)."""
    return [
        Normal(101.6, 4.0),
        Normal(0.0233, 0.0005),
        Triangular(0.2, 0.3, 0.5),
        Triangular(0.01, 0.05, 0.3),
        Triangular(0.5e-6, 5.0e-6, 10.0e-6),
        Triangular(1.0e-9, 4.5e-9, 8.0e-9),
        Triangular(0.1e-4, 7.8e-4, 12e-4),
    ]


@dataclass
class SyntheticProblem:
    function: Union[str, Callable]
    input_dist: Sequence = field(default_factory=list)
    noise_sd: float = 0.0
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if isinstance(self.function, str) and self.function not in FUNCTIONS:
            raise ValueError(f"unknown function {self.function!r}; "
                             f"choose from {sorted(FUNCTIONS)}")
        if not self.input_dist:
            raise ValueError("input_dist must not be empty")

    @property
    def dim(self) -> int:
        return sum(dist.dim for dist in self.input_dist)

    def evaluate(self, X) -> np.ndarray:
        f = FUNCTIONS[self.function] if isinstance(self.function, str) else self.function
        return np.asarray(f(X), dtype=float)


def sample_doe(problem: SyntheticProblem):
    """Monte Carlo design ``(X, y)``; fully determined by ``problem.seed``."""
    rng = np.random.default_rng(problem.seed)
    cols = []
    for dist in problem.input_dist:
        draw = dist.sample(rng, problem.n_samples)
        cols.append(draw.reshape(problem.n_samples, -1))
    X = np.hstack(cols)
    g = problem.evaluate(X)
    if problem.noise_sd > 0:
        y = g + rng.normal(0.0, problem.noise_sd, size=problem.n_samples)
    else:
        y = g.copy()
    return X, y


@dataclass(frozen=True)
class Standardizer:
    """Recorded per-column affine map ``(x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray
    source: str = "empirical"

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.mean) / self.scale

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.mean


def standardize(X, stats: Union[str, Sequence] = "empirical"):
    """Standardize columns with distribution moments or empirical moments.

    Parameters
    ----------
    X : array-like of shape (n, d)
    stats : "empirical" or sequence of input distributions
        Empirical moments use the population (1/n) variance.

    Returns
    -------
    X_std : ndarray
    transform : Standardizer
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if isinstance(stats, str):
        if stats != "empirical":
            raise ValueError("stats must be 'empirical' or a list of distributions")
        mean, scale, source = X.mean(axis=0), X.std(axis=0), "empirical"
    else:
        mean = np.concatenate([np.atleast_1d(d.mean()) for d in stats])
        scale = np.concatenate([np.atleast_1d(d.std()) for d in stats])
        source = "known-moments"
        if mean.size != X.shape[1]:
            raise ValueError("one distribution per column is required")
    if np.any(scale == 0):
        raise ValueError("zero column variance: cannot standardize")
    tf = Standardizer(mean=mean, scale=scale, source=source)
    return tf.apply(X), tf
