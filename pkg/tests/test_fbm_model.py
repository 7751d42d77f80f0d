"""
Tests for the fBm increment covariance, sampling and log-density
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

import numpy as np
import pytest
from pytest import approx
from scipy.integrate import quad
from scipy.stats import multivariate_normal

from roughlik.utils import CovarianceError, GridError, retry_with_jitter
from roughlik.utils.fbm_model import (
    LOG_2PI, FbmIncrementModel, covariance, increment_autocovariance, log_density,
)
from roughlik.utils.grid_path import Partition, dyadic_grid


class TestCovariance:

    def test_brownian_case_is_diagonal(self):
        delta = 2.0 ** -5
        factor = covariance(0.5, delta, 32)
        np.testing.assert_array_equal(factor.matrix, delta * np.eye(32))
        assert factor.log_det == approx(32 * np.log(delta), rel=1e-13)

    @pytest.mark.parametrize('h', [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_symmetric_toeplitz_positive_definite(self, h):
        factor = covariance(h, 0.1, 50)
        matrix = factor.matrix
        np.testing.assert_array_equal(matrix, matrix.T)
        np.testing.assert_allclose(np.diag(matrix, 3), matrix[3, 0])
        assert np.all(np.linalg.eigvalsh(matrix) > 0)
        np.testing.assert_allclose(factor.chol @ factor.chol.T, matrix, atol=1e-14)

    @pytest.mark.parametrize('h', [0.2, 0.5, 0.8])
    def test_self_similarity(self, h):
        delta = 0.037
        scaled = covariance(h, delta, 20).matrix
        unit = covariance(h, 1.0, 20).matrix
        np.testing.assert_allclose(scaled, delta ** (2 * h) * unit, rtol=1e-14)

    def test_increment_sum_has_fbm_variance(self):
        # Var(X_T) = T^{2h}: the covariance entries must sum accordingly
        h, n = 0.3, 16
        factor = covariance(h, 1.0 / n, n)
        assert factor.matrix.sum() == approx(1.0, rel=1e-12)

    def test_autocovariance_sign(self):
        assert np.all(increment_autocovariance(0.3, 10)[1:] < 0)
        assert np.all(increment_autocovariance(0.7, 10)[1:] > 0)

    def test_rough_off_diagonal_value(self):
        matrix = covariance(0.75, 1.0, 2).matrix
        np.testing.assert_allclose(np.diag(matrix), [1.0, 1.0], rtol=1e-14)
        assert matrix[0, 1] == approx((2.0 ** 1.5 - 2.0) / 2.0, rel=1e-14)
        assert matrix[0, 1] == approx(0.414214, abs=1e-6)

    @pytest.mark.parametrize('h', [0.0, 1.0, -0.2])
    def test_hurst_range(self, h):
        with pytest.raises(ValueError, match="Hurst"):
            covariance(h, 0.1, 4)


class TestLogDensity:

    def test_matches_scipy(self, rng):
        factor = covariance(0.7, 0.125, 8)
        x = rng.standard_normal(8) * 0.3
        expected = multivariate_normal(mean=np.zeros(8), cov=factor.matrix).logpdf(x)
        assert log_density(x, factor) == approx(expected, rel=1e-10)

    def test_single_interval_integrates_to_one(self):
        factor = covariance(0.3, 0.5, 1)
        total, _ = quad(lambda x: np.exp(log_density(np.array([x]), factor)), -np.inf, np.inf)
        assert total == approx(1.0, abs=1e-8)

    def test_zero_at_unit_variance(self):
        factor = covariance(0.5, 1.0, 1)
        assert log_density(np.zeros(1), factor) == approx(-0.5 * LOG_2PI)

    def test_independent_coordinates_add(self, rng):
        factor = covariance(0.4, 0.25, 6)
        x = rng.standard_normal((6, 2))
        total = log_density(x, factor)
        assert total == approx(log_density(x[:, 0], factor) + log_density(x[:, 1], factor))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="entries"):
            log_density(np.zeros(3), covariance(0.5, 1.0, 4))


class TestSampling:

    def test_seeded_sampling_is_deterministic(self):
        model = FbmIncrementModel(0.3, dyadic_grid(5, 1.0))
        a = model.sample(42, dim=2)
        b = model.sample(42, dim=2)
        np.testing.assert_array_equal(a.raw_increments, b.raw_increments)
        assert not np.array_equal(a.raw_increments, model.sample(43, dim=2).raw_increments)

    def test_sample_shape_and_partition(self):
        partition = dyadic_grid(4, 2.0)
        incs = FbmIncrementModel(0.6, partition).sample(1, dim=3)
        assert incs.raw_increments.shape == (32, 3)
        assert incs.partition.same_as(partition)

    def test_brownian_sample_variance_matches_spacing(self):
        # 80 independent coordinates of 128 increments
        delta = 2.0 ** -7
        incs = FbmIncrementModel(0.5, dyadic_grid(7, 1.0)).sample(11, dim=80)
        assert np.var(incs.raw_increments) == approx(delta, rel=0.05)

    def test_rough_lag_one_correlation(self):
        draws = 10 ** 4
        incs = FbmIncrementModel(0.75, Partition.uniform(1.0, 2)).sample(5, dim=draws)
        corr = np.corrcoef(incs.raw_increments[0], incs.raw_increments[1])[0, 1]
        expected = (2.0 ** 1.5 - 2.0) / 2.0
        stderr = (1.0 - expected ** 2) / np.sqrt(draws)
        assert abs(corr - expected) < 3.0 * stderr

    def test_needs_homogeneous_grid(self):
        with pytest.raises(GridError, match="homogeneous"):
            FbmIncrementModel(0.5, Partition(np.array([0.0, 0.1, 1.0])))


class TestJitterRetry:

    def test_singular_matrix_recovers_with_jitter(self):
        @retry_with_jitter(max_retries=1, relative_jitter=1e-12)
        def factor(matrix):
            return np.linalg.cholesky(matrix)

        chol = factor(np.ones((2, 2)))
        assert np.all(np.isfinite(chol))

    def test_indefinite_matrix_fails(self):
        @retry_with_jitter(max_retries=1, relative_jitter=1e-12)
        def factor(matrix):
            return np.linalg.cholesky(matrix)

        with pytest.raises(CovarianceError, match="not positive definite"):
            factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_no_retries(self):
        @retry_with_jitter(max_retries=0)
        def factor(matrix):
            return np.linalg.cholesky(matrix)

        with pytest.raises(CovarianceError):
            factor(np.ones((2, 2)))
