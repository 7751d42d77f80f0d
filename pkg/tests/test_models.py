"""
Tests for the registered vector fields
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

import numpy as np
import pytest

from roughlik.models import FIELD_REGISTRY, get_field, register_field

THETAS = {
    'fou': {'lam': 0.7, 'sigma': 1.3},
    'pure_integrator': {'sigma': 2.0},
    'nonlinear2d': {'omega': 0.8},
    'diagonal_ou': {'lam1': 0.5, 'lam2': 2.0, 'sigma1': 1.0, 'sigma2': 0.3},
    'decoupled_driver': {'lam': 1.0, 'sigma': 0.5},
    'coupled_linear': {'lam': 1.0, 'sigma1': 0.8, 'sigma2': 0.6},
}


def central_difference(func, y, eps=1e-6):
    columns = []
    for j in range(y.shape[-1]):
        step = np.zeros(y.shape[-1])
        step[j] = eps
        columns.append((func(y + step) - func(y - step)) / (2 * eps))
    return np.stack(columns, axis=-1)


class TestRegistry:

    def test_expected_models_registered(self):
        assert set(THETAS) <= set(FIELD_REGISTRY)

    def test_unknown_model(self):
        with pytest.raises(ValueError, match="Unknown model id"):
            get_field('no_such_model')

    def test_duplicate_registration(self):
        with pytest.raises(ValueError, match="already registered"):
            register_field('fou')(lambda: None)

    def test_integrator_dimension_option(self):
        field = get_field('pure_integrator', dim=3)
        assert (field.d, field.m) == (3, 3)


class TestFieldShapes:

    @pytest.mark.parametrize('model', sorted(THETAS))
    def test_shapes_broadcast_over_batches(self, model, rng):
        field = get_field(model)
        theta = THETAS[model]
        y = rng.standard_normal((4, field.d))
        assert field.a(y, theta).shape == (4, field.d)
        assert field.b(y, theta).shape == (4, field.d, field.m)
        assert field.grad_a(y, theta).shape == (4, field.d, field.d)
        assert field.grad_b(y, theta).shape == (4, field.d, field.m, field.d)

    @pytest.mark.parametrize('model', sorted(THETAS))
    def test_analytic_gradients(self, model, rng):
        field = get_field(model)
        theta = THETAS[model]
        assert field.exact_gradients
        for _ in range(5):
            y = rng.standard_normal(field.d)
            np.testing.assert_allclose(field.grad_a(y, theta),
                                       central_difference(lambda v: field.a(v, theta), y), atol=1e-7)
            np.testing.assert_allclose(field.grad_b(y, theta),
                                       central_difference(lambda v: field.b(v, theta), y), atol=1e-7)


class TestThetaValidation:

    def test_missing_parameter(self):
        with pytest.raises(ValueError, match="missing parameters: sigma"):
            get_field('fou').check_theta({'lam': 1.0})

    def test_non_positive_sigma(self):
        with pytest.raises(ValueError, match="'sigma' must be positive"):
            get_field('fou').check_theta({'lam': 1.0, 'sigma': 0.0})
