"""Gaussian-process surrogates with cross-conformal prediction intervals."""

__version__ = "0.1.0"

from .kernels import KernelSpec, cross_vector, gram_matrix, matern_eval
from .gp import (
    FittedGP,
    MleSettings,
    condition,
    credibility_interval,
    fit,
    neg_log_likelihood,
    posterior_mean,
    posterior_std,
)
from .intervals import IntervalSet
from .loo import LooEnsemble, build_loo_ensemble, loo_from_gp, loo_prediction_grid
from .conformal import (
    jackknife,
    jackknife_minmax,
    jackknife_plus,
    jminmax_gp,
    jplus_gp,
    q_minus,
    q_plus,
)
from .metrics import (
    EvalRecord,
    beta_soft_threshold,
    bootstrap_spearman,
    empirical_coverage,
    mse,
    predictivity_q2,
    select_best,
    spearman_width_error,
)
