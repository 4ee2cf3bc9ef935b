import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma, kv

from gpconformal.kernels import (
    KernelSpec,
    cross_matrix,
    cross_vector,
    gram_matrix,
    matern_bessel,
    matern_eval,
    matern_from_distance,
    nugget_diagonal,
)


def bessel_oracle(nu, sigma2, r):
    """Textbook Matérn through scipy's K_nu, written independently of the package."""
    if r == 0:
        return sigma2
    s = math.sqrt(2 * nu) * r
    return sigma2 * 2 ** (1 - nu) / gamma(nu) * s ** nu * kv(nu, s)


class TestKernelSpec:
    def test_scalar_theta_becomes_tuple(self):
        spec = KernelSpec(nu=1.5, sigma2=2.0, theta=0.3)
        assert spec.theta == (0.3,)
        assert spec.isotropic
        np.testing.assert_array_equal(spec.theta_for(4), np.full(4, 0.3))

    @pytest.mark.parametrize("nu", [0, 1, 2.0, 0.25, -0.5, 1.4999])
    def test_rejects_non_half_integer(self, nu):
        with pytest.raises(ValueError, match="half-integer"):
            KernelSpec(nu=nu, sigma2=1.0)

    def test_accepts_general_half_integer(self):
        assert KernelSpec(nu=4.5, sigma2=1.0).nu == 4.5

    @pytest.mark.parametrize("kwargs", [
        {"sigma2": 0.0}, {"sigma2": -1.0}, {"sigma2": 1.0, "theta": (1.0, 0.0)},
        {"sigma2": 1.0, "nugget": -1e-3}, {"sigma2": 1.0, "nugget_mode": "both"},
    ])
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ValueError):
            KernelSpec(nu=0.5, **kwargs)

    def test_anisotropic_dimension_mismatch(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0, theta=(1.0, 2.0))
        with pytest.raises(ValueError, match="dimension mismatch"):
            spec.theta_for(3)

    def test_nugget_modes(self):
        sd = KernelSpec(nu=0.5, sigma2=1.0, nugget=0.1)
        var = KernelSpec(nu=0.5, sigma2=1.0, nugget=0.1, nugget_mode="variance_on_diagonal")
        assert nugget_diagonal(sd) == 0.1
        assert nugget_diagonal(var) == pytest.approx(0.01)


class TestMaternEval:
    def test_exponential_at_unit_distance(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0, theta=1.0)
        assert matern_eval(spec, [0.0], [1.0]) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_three_halves_example(self):
        spec = KernelSpec(nu=1.5, sigma2=2.0, theta=0.5)
        s = math.sqrt(3) * 2.0
        assert matern_eval(spec, [0.0], [1.0]) == pytest.approx(2.0 * (1 + s) * math.exp(-s))

    def test_five_halves_example(self):
        spec = KernelSpec(nu=2.5, sigma2=1.0, theta=1.0)
        s = math.sqrt(5)
        expected = (1 + s + s * s / 3) * math.exp(-s)
        assert matern_eval(spec, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(expected)

    def test_zero_distance_is_exactly_sigma2(self):
        spec = KernelSpec(nu=2.5, sigma2=3.7, theta=(0.2, 5.0))
        assert matern_eval(spec, [0.3, -1.0], [0.3, -1.0]) == 3.7

    def test_anisotropic_scaling(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0, theta=(1.0, 2.0))
        assert matern_eval(spec, [0, 0], [3.0, 4.0]) == pytest.approx(math.exp(-math.sqrt(13.0)))

    def test_dimension_mismatch(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0)
        with pytest.raises(ValueError, match="dimension mismatch"):
            matern_eval(spec, [0.0, 1.0], [0.0])

    def test_non_finite_point(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0)
        with pytest.raises(ValueError):
            matern_eval(spec, [np.nan], [0.0])

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 3.5, 6.5])
    def test_closed_form_matches_bessel_oracle(self, nu):
        spec = KernelSpec(nu=nu, sigma2=1.3)
        r = np.concatenate([[0.0, 1e-8, 1e-3], np.linspace(0.01, 8.0, 200)])
        got = matern_from_distance(spec, r)
        want = np.array([bessel_oracle(nu, 1.3, ri) for ri in r])
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_package_bessel_form_matches_oracle(self):
        r = np.linspace(0.0, 5.0, 51)
        got = matern_bessel(1.5, 2.0, r)
        want = [bessel_oracle(1.5, 2.0, ri) for ri in r]
        np.testing.assert_allclose(got, want, rtol=1e-12)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
    def test_decreasing_in_distance(self, nu):
        spec = KernelSpec(nu=nu, sigma2=1.0)
        k = matern_from_distance(spec, np.linspace(0, 10, 500))
        assert np.all(np.diff(k) < 0)
        assert np.all(k > 0)


class TestGramMatrix:
    def test_single_point(self):
        spec = KernelSpec(nu=1.5, sigma2=2.5)
        np.testing.assert_array_equal(gram_matrix(spec, [[0.4]]), [[2.5]])

    def test_identical_points(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0)
        np.testing.assert_array_equal(gram_matrix(spec, [[1.0], [1.0]]), np.ones((2, 2)))

    def test_nugget_example(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0, theta=1.0, nugget=0.1)
        K = gram_matrix(spec, [[0.0], [1.0]], with_nugget=True)
        np.testing.assert_allclose(K, [[1.1, 0.367879], [0.367879, 1.1]], atol=1e-6)

    def test_variance_mode_squares_nugget(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0, nugget=0.1, nugget_mode="variance_on_diagonal")
        K = gram_matrix(spec, [[0.0], [1.0]], with_nugget=True)
        np.testing.assert_allclose(np.diag(K), [1.01, 1.01])

    def test_nugget_ignored_unless_requested(self):
        spec = KernelSpec(nu=0.5, sigma2=1.0, nugget=0.5)
        np.testing.assert_array_equal(np.diag(gram_matrix(spec, [[0.0], [1.0]])), [1.0, 1.0])

    def test_matches_pairwise_eval(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(7, 3))
        spec = KernelSpec(nu=2.5, sigma2=0.7, theta=(0.5, 1.0, 2.0))
        K = gram_matrix(spec, X)
        brute = np.array([[matern_eval(spec, a, b) for b in X] for a in X])
        np.testing.assert_allclose(K, brute, rtol=1e-13)

    def test_cross_matrix_shape_and_values(self):
        rng = np.random.default_rng(4)
        X, Xs = rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
        spec = KernelSpec(nu=1.5, sigma2=1.0)
        C = cross_matrix(spec, X, Xs)
        assert C.shape == (3, 5)
        np.testing.assert_allclose(C[1], cross_vector(spec, X, Xs[1]))
        np.testing.assert_allclose(C[2, 4], matern_eval(spec, Xs[2], X[4]))

    def test_dimension_mismatch(self):
        spec = KernelSpec(nu=1.5, sigma2=1.0)
        with pytest.raises(ValueError, match="dimension mismatch"):
            cross_matrix(spec, np.zeros((3, 2)), np.zeros((2, 3)))


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 40),
    d=st.integers(1, 10),
    nu=st.sampled_from([0.5, 1.5, 2.5]),
    nugget=st.floats(1e-6, 1.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_gram_with_nugget_is_symmetric_positive_definite(n, d, nu, nugget, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    spec = KernelSpec(nu=nu, sigma2=1.0, theta=rng.uniform(0.1, 3.0), nugget=nugget)
    K = gram_matrix(spec, X, with_nugget=True)
    np.testing.assert_array_equal(K, K.T)
    np.linalg.cholesky(K)


@settings(max_examples=60, deadline=None)
@given(nu=st.sampled_from([0.5, 1.5, 2.5, 3.5]), r=st.floats(0.0, 50.0),
       sigma2=st.floats(1e-3, 1e3))
def test_closed_form_within_prior_variance(nu, r, sigma2):
    k = float(matern_from_distance(KernelSpec(nu=nu, sigma2=sigma2), r))
    assert 0.0 <= k <= sigma2 * (1 + 1e-15)
