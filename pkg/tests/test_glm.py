import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayespls.errors import FitError, InputError, NumericalError, ShapeError
from bayespls.glm import (
    Dataset,
    FitSettings,
    ModelSpec,
    fit_map,
    log_joint,
    log_likelihood,
    predict_proba,
    score_and_curvature,
)
from bayespls.oracles import finite_difference_gradient, finite_difference_jacobian, grid_search_map

from conftest import random_instance, random_spec


def naive_log_likelihood(theta, X, y, w):
    """Row-by-row summation with the standard library only."""
    total = 0.0
    for xi, yi, wi in zip(X, y, w):
        eta = sum(a * b for a, b in zip(xi, theta))
        p = 1.0 / (1.0 + math.exp(-eta))
        total += wi * (math.log(p) if yi == 1 else math.log(1.0 - p))
    return total


class TestDataset:
    def test_defaults_weights_to_one(self):
        data = Dataset(np.ones((3, 2)), [0, 1, 1])
        np.testing.assert_array_equal(data.weights, np.ones(3))

    def test_immutable(self):
        data = Dataset(np.ones((3, 2)), [0, 1, 1])
        with pytest.raises(ValueError):
            data.features[0, 0] = 5.0

    @pytest.mark.parametrize(
        "kwargs, exc",
        [
            (dict(features=np.ones((3, 2)), labels=[0, 1]), ShapeError),
            (dict(features=np.ones((3, 2)), labels=[0, 1, 2]), InputError),
            (dict(features=[[1.0, np.nan]], labels=[1]), InputError),
            (dict(features=np.ones((2, 1)), labels=[0, 1], weights=[1.0, 0.0]), InputError),
            (dict(features=np.ones((2, 1)), labels=[0, 1], weights=[1.0, np.inf]), InputError),
            (dict(features=np.ones((2, 1)), labels=[0, 1], weights=[1.0]), ShapeError),
        ],
    )
    def test_invariants(self, kwargs, exc):
        with pytest.raises(exc):
            Dataset(**kwargs)


class TestModelSpec:
    def test_rejects_asymmetric(self):
        with pytest.raises(InputError):
            ModelSpec(np.zeros(2), [[1.0, 0.1], [0.0, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(NumericalError):
            ModelSpec(np.zeros(2), [[1.0, 0.0], [0.0, -1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ModelSpec(np.zeros(3), np.eye(2))

    def test_log_prior_matches_scipy(self, rng):
        from scipy.stats import multivariate_normal

        spec = random_spec(rng, 3)
        theta = rng.standard_normal(3)
        expected = multivariate_normal(spec.prior_mean, np.linalg.inv(spec.prior_precision)).logpdf(theta)
        assert spec.log_prior(theta) == pytest.approx(expected, rel=1e-12)


class TestLogLikelihood:
    def test_zero_theta(self, rng):
        X = rng.standard_normal((10, 3))
        y = rng.integers(0, 2, 10)
        assert log_likelihood(np.zeros(3), Dataset(X, y)) == pytest.approx(10 * math.log(0.5), rel=1e-14)
        assert log_likelihood(np.zeros(3), Dataset(X, y)) == pytest.approx(-6.931471805599453)

    def test_single_row(self):
        assert log_likelihood([0.0], Dataset([[1.0]], [1])) == math.log(0.5)

    def test_matches_naive_summation(self, rng):
        for _ in range(20):
            data, theta = random_instance(rng, n=20, d=3, weighted=True)
            expected = naive_log_likelihood(theta, data.features, data.labels, data.weights)
            assert log_likelihood(theta, data) == pytest.approx(expected, rel=1e-12)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            log_likelihood(np.zeros(2), Dataset(np.ones((3, 3)), [0, 1, 0]))

    def test_non_finite_theta(self):
        with pytest.raises(InputError):
            log_likelihood([np.nan, 0.0], Dataset(np.ones((2, 2)), [0, 1]))

    def test_finite_on_extreme_theta(self):
        data = Dataset([[1.0], [1.0]], [0, 1])
        assert np.isfinite(log_likelihood([1e4], data))
        assert log_likelihood([1e4], data) == pytest.approx(math.log(1e-12) + math.log1p(-1e-12))


class TestScoreAndCurvature:
    def test_balanced_symmetry_gradient_zero(self):
        X = np.array([[1.0, 0.5], [1.0, 0.5], [1.0, -2.0], [1.0, -2.0]])
        data = Dataset(X, [0, 1, 0, 1])
        grad, _ = score_and_curvature(np.zeros(2), data, ModelSpec.default(2))
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_quarter_xtx_at_zero(self, rng):
        X = rng.standard_normal((15, 3))
        data = Dataset(X, rng.integers(0, 2, 15))
        tiny = ModelSpec(np.zeros(3), 1e-300 * np.eye(3))
        _, hess = score_and_curvature(np.zeros(3), data, tiny)
        np.testing.assert_allclose(-hess, 0.25 * X.T @ X, rtol=1e-14)

    def test_finite_differences(self, rng):
        for _ in range(25):
            d = int(rng.integers(1, 5))
            data, theta = random_instance(rng, n=30, d=d, weighted=True)
            spec = random_spec(rng, d)
            grad, hess = score_and_curvature(theta, data, spec)
            fd_grad = finite_difference_gradient(lambda t: log_joint(t, data, spec), theta, 1e-6)
            fd_hess = finite_difference_jacobian(lambda t: score_and_curvature(t, data, spec)[0], theta, 1e-6)
            assert np.linalg.norm(grad - fd_grad) <= 1e-5 * max(1.0, np.linalg.norm(fd_grad))
            assert np.linalg.norm(hess - fd_hess) <= 1e-4 * max(1.0, np.linalg.norm(fd_hess))


class TestFitMap:
    def test_balanced_intercept(self):
        data = Dataset([[1.0], [1.0]], [0, 1])
        fit = fit_map(data, ModelSpec.default(1, precision=1e-6))
        assert fit.theta_hat[0] == pytest.approx(0.0, abs=1e-10)
        assert fit.converged

    def test_strong_prior_dominates(self, rng):
        data, _ = random_instance(rng, n=40, d=3)
        spec = ModelSpec(np.array([0.3, -0.2, 1.0]), 1e8 * np.eye(3))
        fit = fit_map(data, spec)
        np.testing.assert_allclose(fit.theta_hat, spec.prior_mean, atol=1e-3)

    def test_separable_matches_grid_search(self):
        X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
        data = Dataset(X, [0, 0, 0, 1, 1, 1])
        spec = ModelSpec.default(1, precision=1.0)
        fit = fit_map(data, spec)
        expected = grid_search_map(data, spec, -10.0, 10.0, 1e-3)
        assert abs(fit.theta_hat[0] - expected[0]) <= 2e-3

    def test_fisher_is_negative_hessian_with_prior(self, rng):
        data, _ = random_instance(rng, n=30, d=2)
        spec = ModelSpec.default(2)
        fit = fit_map(data, spec)
        _, hess = score_and_curvature(fit.theta_hat, data, spec)
        np.testing.assert_allclose(fit.fisher_info, -hess)
        np.testing.assert_allclose(fit.fisher_info, fit.fisher_info.T, atol=1e-8)
        assert np.all(np.linalg.eigvalsh(fit.fisher_info) > 0)
        assert fit.final_gradient_norm <= 1e-8

    def test_idempotent_refit(self, rng):
        for _ in range(10):
            data, _ = random_instance(rng, n=40, d=3)
            spec = random_spec(rng, 3)
            fit = fit_map(data, spec)
            again = fit_map(data, spec, start=fit.theta_hat)
            assert again.iterations <= 2
            np.testing.assert_allclose(again.theta_hat, fit.theta_hat, atol=1e-8)

    def test_deterministic(self, rng):
        data, _ = random_instance(rng, n=40, d=3)
        a = fit_map(data, ModelSpec.default(3))
        b = fit_map(data, ModelSpec.default(3))
        assert np.array_equal(a.theta_hat, b.theta_hat)

    def test_non_convergence_carries_iterate(self, rng):
        data, _ = random_instance(rng, n=40, d=3, scale=3.0)
        with pytest.raises(FitError) as info:
            fit_map(data, ModelSpec.default(3), FitSettings(max_iter=1))
        assert info.value.theta is not None
        assert info.value.gradient_norm > 1e-8

    def test_needs_a_row(self):
        with pytest.raises(InputError):
            fit_map(Dataset.empty(2), ModelSpec.default(2))

    def test_hessian_negative_definite_along_path(self, rng):
        data, _ = random_instance(rng, n=25, d=3, scale=4.0)
        spec = ModelSpec.default(3, precision=0.01)
        for k in range(1, 8):
            try:
                theta = fit_map(data, spec, FitSettings(max_iter=k)).theta_hat
            except FitError as exc:
                theta = exc.theta
            _, hess = score_and_curvature(theta, data, spec)
            np.linalg.cholesky(-hess)


class TestPredictProba:
    def test_zero_theta(self, rng):
        np.testing.assert_array_equal(predict_proba(np.zeros(3), rng.standard_normal((5, 3))), 0.5)

    def test_clamped(self):
        p = predict_proba([1.0], [[1e3]])
        assert p[0] == 1.0 - 1e-12
        assert predict_proba([1.0], [[-1e3]])[0] == 1e-12

    def test_threshold_matches_sign(self, rng):
        X = rng.standard_normal((200, 3))
        theta = rng.standard_normal(3)
        hard = predict_proba(theta, X) >= 0.5
        eta = X @ theta
        np.testing.assert_array_equal(hard[eta != 0], (eta > 0)[eta != 0])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            predict_proba(np.zeros(3), np.ones((4, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_duplicate_row_equals_double_weight(seed):
    rng = np.random.default_rng(seed)
    data, theta = random_instance(rng, n=12, d=2)
    j = int(rng.integers(0, data.n))
    dup = Dataset(np.vstack([data.features, data.features[j]]), np.append(data.labels, data.labels[j]))
    w = np.ones(data.n)
    w[j] = 2.0
    doubled = Dataset(data.features, data.labels, w)
    spec = ModelSpec.default(2)
    assert log_likelihood(theta, dup) == pytest.approx(log_likelihood(theta, doubled), abs=1e-10)
    g1, _ = score_and_curvature(theta, dup, spec)
    g2, _ = score_and_curvature(theta, doubled, spec)
    np.testing.assert_allclose(g1, g2, atol=1e-10)
    np.testing.assert_allclose(fit_map(dup, spec).theta_hat, fit_map(doubled, spec).theta_hat, atol=1e-10)
