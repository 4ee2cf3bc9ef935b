"""Fit a GP on a noisy 1-D function and compare interval methods on held-out points.

Run with ``python3 demos/quickstart.py``.
"""
import numpy as np

from gpconformal.bench import standardize
from gpconformal.conformal import jackknife_plus, jminmax_gp, jplus_gp
from gpconformal.gp import MleSettings, credibility_interval, fit
from gpconformal.loo import loo_from_gp
from gpconformal.metrics import average_width, bootstrap_spearman, empirical_coverage

rng = np.random.default_rng(0)
g = lambda x: np.sin(3.0 * x[:, 0])

# Training inputs are denser on the left, where the noise is also smallest.
X = rng.beta(1.0, 2.0, (80, 1))
y = g(X) + rng.normal(0.0, 0.2 * X[:, 0])
X_test = rng.random((400, 1))
y_test = g(X_test) + rng.normal(0.0, 0.2 * X_test[:, 0])

# Length-scale bounds assume standardized inputs; reuse the training moments for X_test.
X, tf = standardize(X)
X_test = tf.apply(X_test)

gp = fit(X, y, nu=1.5, nugget=0.01, settings=MleSettings(seed=0))
print(f"sigma2={gp.spec.sigma2:.3g} theta={gp.spec.theta[0]:.3g}")

pred = gp.mean(X_test)
err = np.abs(y_test - pred)
ens = loo_from_gp(gp, X_test, beta=1.0)

alpha = 0.1
for iv in (credibility_interval(gp, X_test, alpha), jackknife_plus(ens, alpha),
           jplus_gp(ens, alpha), jminmax_gp(ens, alpha)):
    cov = empirical_coverage(iv, y_test)
    width, _ = average_width(iv)
    rho = bootstrap_spearman(iv, err, n_boot=499, seed=0)[0]
    print(f"{iv.method:>12}: coverage {cov:.3f}  width {width:.3f}  spearman {rho:+.3f}")
