"""Leave-one-out GP posteriors, residuals and non-conformity scores.

Three ways to obtain the n LOO posteriors:

``closed-form``
    One factorization of the full Gram matrix.  With ``A = K_eps^{-1}``,
    ``w = A y`` and ``a_i = A e_i``, the posterior without point ``i`` is

        mean_{-i}(x) = mean(x) - (k(x)^T a_i) w_i / A_ii
        var_{-i}(x)  = var(x)  + (k(x)^T a_i)^2 / A_ii

    and at the held-out point itself ``y_i - mean_{-i}(X_i) = w_i / A_ii``.
``retrain-fixed-hyper``
    Re-condition on each fold, keeping the full-data hyperparameters.
``retrain-full``
    Re-run the likelihood optimisation on each fold.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .gp import FittedGP, MleSettings, condition, fit, _posterior_var
from .kernels import KernelSpec, _as_points, cross_matrix, nugget_diagonal

__all__ = ["LOO_MODES", "LooEnsemble", "build_loo_ensemble", "loo_from_gp",
           "loo_prediction_grid"]

LOO_MODES = ("closed-form", "retrain-fixed-hyper", "retrain-full")


@dataclass(frozen=True, eq=False)
class LooEnsemble:
    """The n leave-one-out posteriors, evaluated at training and test points.

    ``loo_mean_at_test`` and ``loo_std_at_test`` have shape ``(n, m)``:
    row ``i`` is the posterior fitted without training point ``i``.
    """

    loo_residual: np.ndarray
    loo_std_at_train: np.ndarray
    loo_mean_at_test: np.ndarray
    loo_std_at_test: np.ndarray
    beta_power: float = 1.0
    delta: float = 1e-6
    mode: str = "closed-form"
    nu: Optional[float] = None

    def __post_init__(self):
        if not self.beta_power > 0:
            raise ValueError("beta must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.mode not in LOO_MODES:
            raise ValueError(f"mode must be one of {LOO_MODES}")
        if self.loo_mean_at_test.shape != self.loo_std_at_test.shape:
            raise ValueError("LOO mean and std grids must have equal shapes")
        if self.loo_mean_at_test.shape[0] != self.loo_residual.size:
            raise ValueError("LOO grids must have one row per training point")

    @property
    def n(self) -> int:
        return self.loo_residual.size

    @property
    def m(self) -> int:
        return self.loo_mean_at_test.shape[1]

    @property
    def loo_score_gamma(self) -> np.ndarray:
        """Residuals divided by ``max(delta, loo_std ** beta)`` at the held-out point."""
        return self.loo_residual / np.maximum(self.delta, self.loo_std_at_train ** self.beta_power)

    def test_weights(self) -> np.ndarray:
        """``max(delta, loo_std_at_test ** beta)``, shape (n, m)."""
        return np.maximum(self.delta, self.loo_std_at_test ** self.beta_power)

    def with_beta(self, beta: float, delta: Optional[float] = None) -> "LooEnsemble":
        """Same posteriors, different score exponent (and optionally floor)."""
        return replace(self, beta_power=beta, delta=self.delta if delta is None else delta)


def _closed_form(gp: FittedGP, Xs: np.ndarray):
    n = gp.n
    A = linalg.cho_solve((gp.chol, True), np.eye(n), check_finite=False)
    A = 0.5 * (A + A.T)
    dA = np.diag(A)
    w = gp.weights
    residual = np.abs(w / dA)
    var_train = 1.0 / dA - nugget_diagonal(gp.spec) - gp.jitter
    if Xs.shape[0] == 0:
        return residual, var_train, np.zeros((n, 0)), np.zeros((n, 0))
    Ks = cross_matrix(gp.spec, gp.X_train, Xs)       # (m, n)
    mean = Ks @ w                                      # (m,)
    var = _posterior_var(gp, Ks)                       # (m,)
    B = (Ks @ A).T                                     # (n, m): k(x_j)^T a_i
    loo_mean = mean[None, :] - B * (w / dA)[:, None]
    loo_var = var[None, :] + B ** 2 / dA[:, None]
    return residual, var_train, loo_mean, loo_var


def _fold(i, X, y, Xs, spec, refit, nu, nugget, nugget_mode, settings):
    keep = np.arange(X.shape[0]) != i
    if refit:
        gp_i = fit(X[keep], y[keep], nu, nugget, settings, nugget_mode=nugget_mode)
    else:
        gp_i = condition(spec, X[keep], y[keep])
    both = np.vstack([X[i:i + 1], Xs])
    Ks = cross_matrix(gp_i.spec, gp_i.X_train, both)
    mean = Ks @ gp_i.weights
    var = _posterior_var(gp_i, Ks)
    return abs(y[i] - mean[0]), var[0], mean[1:], var[1:]


def loo_from_gp(gp: FittedGP, X_star, beta: float = 1.0, delta: float = 1e-6,
                mode: str = "closed-form", settings: Optional[MleSettings] = None,
                threads: int = 1) -> LooEnsemble:
    """LOO ensemble around an already fitted GP.

    ``closed-form`` and ``retrain-fixed-hyper`` reuse ``gp.spec``;
    ``retrain-full`` re-optimises each fold with ``settings``.
    """
    if mode not in LOO_MODES:
        raise ValueError(f"mode must be one of {LOO_MODES}")
    X, y = gp.X_train, gp.y_train
    n = X.shape[0]
    if n < 2:
        raise ValueError("LOO needs at least 2 training points")
    if X_star is None or np.size(X_star) == 0:
        Xs = np.zeros((0, X.shape[1]))
    else:
        Xs = _as_points(X_star, "X_star")
    if Xs.shape[1] != X.shape[1]:
        raise ValueError("dimension mismatch between X_star and training inputs")

    if mode == "closed-form":
        residual, var_train, loo_mean, loo_var = _closed_form(gp, Xs)
    else:
        spec = gp.spec
        args = (X, y, Xs, spec, mode == "retrain-full", spec.nu, spec.nugget,
                spec.nugget_mode, settings)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                folds = list(pool.map(lambda i: _fold(i, *args), range(n)))
        else:
            folds = [_fold(i, *args) for i in range(n)]
        residual = np.array([f[0] for f in folds])
        var_train = np.array([f[1] for f in folds])
        loo_mean = np.array([f[2] for f in folds]).reshape(n, Xs.shape[0])
        loo_var = np.array([f[3] for f in folds]).reshape(n, Xs.shape[0])

    if not (np.all(np.isfinite(residual)) and np.all(np.isfinite(loo_mean))):
        raise np.linalg.LinAlgError("non-finite LOO quantities")
    return LooEnsemble(
        loo_residual=residual,
        loo_std_at_train=np.sqrt(np.maximum(var_train, 0.0)),
        loo_mean_at_test=loo_mean,
        loo_std_at_test=np.sqrt(np.maximum(loo_var, 0.0)),
        beta_power=beta, delta=delta, mode=mode, nu=gp.spec.nu)


def build_loo_ensemble(X, y, nu: float, nugget: float = 0.0,
                       settings: Optional[MleSettings] = None, X_star=None,
                       beta: float = 1.0, delta: float = 1e-6,
                       mode: str = "closed-form", nugget_mode: str = "sd_on_diagonal",
                       spec: Optional[KernelSpec] = None, threads: int = 1) -> LooEnsemble:
    """Fit the full GP (unless ``spec`` is given) and build its LOO ensemble."""
    X = _as_points(X)
    if X.shape[0] < 2:
        raise ValueError("LOO needs at least 2 training points")
    if spec is None:
        gp = fit(X, y, nu, nugget, settings, nugget_mode=nugget_mode)
    else:
        gp = condition(spec, X, y)
    if X_star is None:
        X_star = np.zeros((0, X.shape[1]))
    return loo_from_gp(gp, X_star, beta=beta, delta=delta, mode=mode,
                       settings=settings, threads=threads)


def loo_prediction_grid(ensemble: LooEnsemble, X_star=None):
    """``(means, stds)``, each of shape (n, m).

    The grids are computed when the ensemble is built; ``X_star``, when
    given, is only checked against the number of test points.
    """
    if X_star is not None:
        m = _as_points(X_star, "X_star").shape[0] if np.size(X_star) else 0
        if m != ensemble.m:
            raise ValueError(f"ensemble was built for {ensemble.m} test points, got {m}")
    return ensemble.loo_mean_at_test, np.maximum(ensemble.loo_std_at_test, 0.0)
