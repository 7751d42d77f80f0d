"""
Tests for order detection, hierarchical MLE and the staged posterior
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

import numpy as np
import pytest
from pytest import approx

from conftest import simulate_fou
from roughlik.services.estimator_service import (
    ParameterSpace, detect_orders, hierarchical_mle, posterior_orders, staged_posterior,
)
from roughlik.services.likelihood_service import ScaledLogLik, fou_scaled_loglik
from roughlik.utils import EstimationError, PosteriorUnderflowError, UnestimableParameterError
from roughlik.utils.fou_reference import fou_mle


@pytest.fixture(scope='module')
def long_fou():
    """1024 intervals on [0, 16] so that lam is identifiable"""
    obs, _ = simulate_fou(6, T=16.0, seed=17)
    return obs


@pytest.fixture(scope='module')
def fou_space(long_fou):
    sigma2_hat, lam_hat = fou_mle(long_fou)
    sigma_hat = np.sqrt(sigma2_hat)
    return ParameterSpace(['sigma', 'lam'], {
        'sigma': np.linspace(sigma_hat - 0.23, sigma_hat + 0.17, 9),
        'lam': np.linspace(lam_hat - 0.93, lam_hat + 0.87, 10),
    })


def planted(offset=0.0):
    """l0 peaks at u = 1 and ignores v, l1 peaks at v = 2"""
    return ScaledLogLik(exponents=(-1.0, 0.0), components=(
        lambda obs, th: offset - (th['u'] - 1.0) ** 2,
        lambda obs, th: offset - (th['v'] - 2.0) ** 2 - 0.1 * (th['u'] - 1.0) ** 2,
    ))


PLANTED_GRID = {'u': np.linspace(0.0, 3.0, 7), 'v': np.linspace(0.0, 4.0, 9)}


class TestParameterSpace:

    def test_points_in_c_order(self):
        space = ParameterSpace(['a', 'b'], {'a': [0.0, 1.0], 'b': [5.0, 6.0, 7.0]})
        points = space.points()
        assert len(points) == 6
        assert points[0] == {'a': 0.0, 'b': 5.0}
        assert points[1] == {'a': 0.0, 'b': 6.0}
        assert points[-1] == {'a': 1.0, 'b': 7.0}
        assert space.shape == (2, 3)

    def test_midpoint_and_spacing(self):
        space = ParameterSpace(['a'], {'a': [0.0, 0.5, 2.0]})
        assert space.midpoint('a') == 1.0
        assert space.spacing('a') == 0.5

    def test_grid_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            ParameterSpace(['a'], {'a': [1.0, 0.0]})

    def test_orders_must_cover_every_coordinate(self):
        space = ParameterSpace(['a', 'b'], {'a': [0.0, 1.0], 'b': [0.0, 1.0]})
        with pytest.raises(ValueError, match="without a finite order: b"):
            space.with_orders({'a': 0})


class TestOrderDetection:

    def test_fou_orders(self, long_fou, fou_space):
        assert detect_orders(fou_scaled_loglik(), fou_space, long_fou) == {'sigma': 0, 'lam': 1}

    def test_planted_orders(self, fou_data):
        space = ParameterSpace(['u', 'v'], PLANTED_GRID)
        assert detect_orders(planted(), space, fou_data) == {'u': 0, 'v': 1}

    def test_unused_coordinate_is_unestimable(self, long_fou, fou_space):
        grid = dict(fou_space.grid)
        grid['dummy'] = [0.0, 1.0]
        space = ParameterSpace(['sigma', 'lam', 'dummy'], grid)
        with pytest.raises(UnestimableParameterError) as info:
            detect_orders(fou_scaled_loglik(), space, long_fou)
        assert info.value.coordinate == 'dummy'


class TestHierarchicalMle:

    def test_matches_analytic_estimators(self, long_fou, fou_space):
        sigma2_hat, lam_hat = fou_mle(long_fou)
        estimate = hierarchical_mle(fou_scaled_loglik(), fou_space, long_fou)
        assert estimate.estimates['sigma'] ** 2 == approx(sigma2_hat, rel=1e-6)
        assert estimate.estimates['lam'] == approx(lam_hat, abs=1e-6)
        assert not estimate.any_on_boundary

    def test_records_follow_stage_order(self, long_fou, fou_space):
        estimate = hierarchical_mle(fou_scaled_loglik(), fou_space, long_fou)
        assert [(r.coordinate, r.order) for r in estimate.records] == [('sigma', 0), ('lam', 1)]
        assert estimate.records[0].estimate == estimate.estimates['sigma']
        assert estimate.to_dict()[1]['coordinate'] == 'lam'

    def test_planted_maxima(self, fou_data):
        estimate = hierarchical_mle(planted(), ParameterSpace(['u', 'v'], PLANTED_GRID), fou_data)
        assert estimate.estimates['u'] == approx(1.0, abs=1e-6)
        assert estimate.estimates['v'] == approx(2.0, abs=1e-6)

    def test_invariant_to_additive_constants(self, fou_data):
        space = ParameterSpace(['u', 'v'], {'u': np.linspace(0.1, 2.9, 8), 'v': np.linspace(0.3, 3.7, 6)})
        base = hierarchical_mle(planted(), space, fou_data).estimates
        shifted = hierarchical_mle(planted(offset=5.0), space, fou_data).estimates
        assert shifted['u'] == approx(base['u'], abs=1e-6)
        assert shifted['v'] == approx(base['v'], abs=1e-6)

    def test_boundary_flag(self, fou_data):
        space = ParameterSpace(['u', 'v'], {'u': np.linspace(2.0, 3.0, 5), 'v': PLANTED_GRID['v']})
        estimate = hierarchical_mle(planted(), space, fou_data)
        record = estimate.records[0]
        assert record.coordinate == 'u'
        assert record.stage_argmax_on_boundary
        assert record.grid_argmax == 2.0
        assert estimate.any_on_boundary

    def test_given_order_assignment(self, long_fou, fou_space):
        space = fou_space.with_orders({'sigma': 0, 'lam': 1})
        detected = hierarchical_mle(fou_scaled_loglik(), fou_space, long_fou).estimates
        assigned = hierarchical_mle(fou_scaled_loglik(), space, long_fou).estimates
        assert assigned == approx(detected)

    def test_order_beyond_components(self, long_fou, fou_space):
        space = fou_space.with_orders({'sigma': 0, 'lam': 5})
        with pytest.raises(EstimationError, match="exceed"):
            hierarchical_mle(fou_scaled_loglik(), space, long_fou)


class TestStagedPosterior:

    def test_stages_are_normalised(self, long_fou, fou_space):
        posterior = staged_posterior(fou_scaled_loglik(), fou_space, None, long_fou)
        assert posterior.stages == 3
        for density in posterior.stage_densities:
            assert density.shape == fou_space.shape
            assert density.sum() == approx(1.0, abs=1e-12)
            assert np.all(density >= 0)

    def test_mode_near_hierarchical_estimate(self, long_fou, fou_space):
        posterior = staged_posterior(fou_scaled_loglik(), fou_space, None, long_fou)
        estimate = hierarchical_mle(fou_scaled_loglik(), fou_space, long_fou).estimates
        mode = posterior.mode()
        for name in fou_space.names:
            assert abs(mode[name] - estimate[name]) <= fou_space.spacing(name)

    def test_posterior_orders_match_detected_orders(self, long_fou, fou_space):
        posterior = staged_posterior(fou_scaled_loglik(), fou_space, None, long_fou)
        assert posterior_orders(posterior) == {'sigma': 0, 'lam': 1}

    def test_flat_stage_leaves_density_unchanged(self, fou_data):
        flat_first = ScaledLogLik(exponents=(-1.0, 0.0), components=(
            lambda obs, th: 0.0,
            lambda obs, th: -(th['u'] - 1.0) ** 2,
        ))
        space = ParameterSpace(['u'], {'u': np.linspace(0.0, 2.0, 5)})
        posterior = staged_posterior(flat_first, space, None, fou_data)
        np.testing.assert_allclose(posterior.stage_densities[1], posterior.stage_densities[0], rtol=1e-15)
        assert posterior.mode() == {'u': 1.0}
        assert posterior_orders(posterior) == {'u': 1}

    def test_invariant_to_additive_constants(self, fou_data):
        space = ParameterSpace(['u', 'v'], PLANTED_GRID)
        base = staged_posterior(planted(), space, None, fou_data)
        shifted = staged_posterior(planted(offset=3.0), space, None, fou_data)
        for a, b in zip(base.stage_densities, shifted.stage_densities):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-300)

    def test_prior_must_be_positive_and_normalised(self, fou_data):
        space = ParameterSpace(['u'], {'u': [0.0, 1.0]})
        with pytest.raises(ValueError, match="positive"):
            staged_posterior(planted(), space, np.array([1.0, 0.0]), fou_data)
        with pytest.raises(ValueError, match="normalised"):
            staged_posterior(planted(), space, np.array([0.7, 0.7]), fou_data)

    def test_underflow(self, fou_data):
        components = ScaledLogLik(exponents=(-1.0, 0.0), components=(
            lambda obs, th: -1e6 * th['u'] ** 2,
            lambda obs, th: -1e6 * (th['u'] - 1.0) ** 2,
        ))
        space = ParameterSpace(['u'], {'u': [0.0, 1.0]})
        with pytest.raises(PosteriorUnderflowError, match="Stage 2"):
            staged_posterior(components, space, None, fou_data)

    def test_rows_and_header(self, fou_data):
        space = ParameterSpace(['u', 'v'], PLANTED_GRID)
        posterior = staged_posterior(planted(), space, None, fou_data)
        assert posterior.header() == ['u', 'v', 'u0', 'u1', 'u2']
        rows = posterior.to_rows()
        assert len(rows) == 7 * 9
        assert rows[1][:2] == [0.0, 0.5]
        assert sum(row[-1] for row in rows) == approx(1.0)

    def test_never_moving_coordinate(self, fou_data):
        space = ParameterSpace(['u', 'w'], {'u': [0.0, 1.0, 2.0], 'w': [0.0, 1.0]})
        components = ScaledLogLik(exponents=(0.0,), components=(lambda obs, th: -(th['u'] - 1.0) ** 2,))
        posterior = staged_posterior(components, space, None, fou_data)
        with pytest.raises(UnestimableParameterError) as info:
            posterior_orders(posterior)
        assert info.value.coordinate == 'w'
