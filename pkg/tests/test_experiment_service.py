"""
Tests for experiment configuration and the harness pipelines
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

import numpy as np
import pytest
from pytest import approx

from conftest import simulate_fou
from roughlik.services import experiment_service
from roughlik.services.experiment_service import (
    ConvergenceReport, ExperimentConfig, parse_levels, parse_theta, parse_theta_grid,
    run_convergence, run_inversion, run_loglik, run_mle, simulate,
)
from roughlik.utils import ConfigError, FlowError
from roughlik.utils.fou_reference import FouParams, fou_loglik, fou_mle


class TestParsers:

    def test_theta_grid(self):
        grid = parse_theta_grid('lam=0.5:1.5:3, sigma=1:2:2')
        assert grid == {'lam': [0.5, 1.0, 1.5], 'sigma': [1.0, 2.0]}

    @pytest.mark.parametrize('spec,message', [
        ('lam', 'expected name=lo:hi:count'),
        ('lam=1:0:3', 'hi > lo'),
        ('lam=0:1:1', 'count >= 2'),
        ('lam=a:1:3', 'Invalid bounds'),
        (' , ', 'Empty theta grid'),
    ])
    def test_theta_grid_errors(self, spec, message):
        with pytest.raises(ConfigError, match=message):
            parse_theta_grid(spec)

    def test_theta(self):
        assert parse_theta('lam=1.5,sigma=2') == {'lam': 1.5, 'sigma': 2.0}

    @pytest.mark.parametrize('spec', ['lam', 'lam=x', '=1.0'])
    def test_theta_errors(self, spec):
        with pytest.raises(ConfigError, match="expected name=value"):
            parse_theta(spec)

    def test_levels(self):
        assert parse_levels('3..7') == (3, 7)
        assert parse_levels(' 4..4 ') == (4, 4)

    def test_level_errors(self):
        with pytest.raises(ConfigError, match="empty"):
            parse_levels('7..3')
        with pytest.raises(ConfigError, match="expected A..B"):
            parse_levels('3-7')


class TestExperimentConfig:

    def test_from_dict_parses_strings(self):
        cfg = ExperimentConfig.from_dict({'levels': '2..5', 'theta_grid': 'lam=0:1:2', 'seed': 4})
        assert cfg.levels == (2, 5)
        assert cfg.theta_grid == {'lam': [0.0, 1.0]}
        assert cfg.seed == 4

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="Unknown config keys: colour"):
            ExperimentConfig.from_dict({'colour': 'red'})

    def test_overrides_skip_none(self):
        cfg = ExperimentConfig(seed=3).with_overrides(seed=None, h=0.3)
        assert cfg.seed == 3
        assert cfg.h == 0.3

    def test_to_dict_lists_levels(self):
        assert ExperimentConfig(levels=(1, 3)).to_dict()['levels'] == [1, 3]

    def test_steps_from_active_config(self, config_class):
        assert ExperimentConfig().steps == config_class.RK4_SUBSTEPS
        assert ExperimentConfig(steps_per_interval=4).steps == 4

    def test_grid_points_complete_theta(self):
        cfg = ExperimentConfig(theta={'lam': 1.0, 'sigma': 0.5}, theta_grid={'lam': [0.5, 2.0]})
        points = cfg.grid_points(cfg.build_field())
        assert points == [{'lam': 0.5, 'sigma': 0.5}, {'lam': 2.0, 'sigma': 0.5}]


class TestValidation:

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="Unknown model id 'nope'"):
            ExperimentConfig(model='nope').validate()

    def test_non_positive_sigma(self):
        with pytest.raises(ConfigError, match="must be positive"):
            ExperimentConfig(theta={'lam': 1.0, 'sigma': 0.0}).validate()

    def test_non_dyadic_horizon(self):
        with pytest.raises(ConfigError, match="not an integer"):
            ExperimentConfig(n=2, T=0.3).validate()

    def test_hurst_range(self):
        with pytest.raises(ConfigError, match="h must lie"):
            ExperimentConfig(h=1.0).validate()

    def test_seed_required(self):
        with pytest.raises(ConfigError, match="seed is required"):
            ExperimentConfig().validate(require_seed=True)

    def test_initial_state_dimension(self):
        with pytest.raises(ConfigError, match="y0 must have 2 entries"):
            ExperimentConfig(model='nonlinear2d', theta={'omega': 0.8}, y0=[1.0]).validate()

    def test_grid_names_must_be_parameters(self):
        cfg = ExperimentConfig(theta_grid={'omega': [0.0, 1.0]})
        with pytest.raises(ConfigError, match="not parameters of 'fou'"):
            cfg.parameter_space(cfg.build_field())


class TestSimulate:

    def test_seeded_runs_are_identical(self):
        cfg = ExperimentConfig(seed=11, n=4)
        first, second = simulate(cfg), simulate(cfg)
        np.testing.assert_array_equal(first.observations.y_values, second.observations.y_values)
        np.testing.assert_array_equal(first.driver.values, second.driver.values)

    def test_different_seeds_differ(self):
        a = simulate(ExperimentConfig(seed=1, n=4)).observations.y_values
        b = simulate(ExperimentConfig(seed=2, n=4)).observations.y_values
        assert not np.array_equal(a, b)

    def test_zero_noise_decays(self):
        cfg = ExperimentConfig(theta={'lam': 2.0, 'sigma': 1.0}, y0=[1.0], zero_noise=True)
        result = simulate(cfg)
        times = result.observations.partition.times
        np.testing.assert_allclose(result.observations.y_values[:, 0], np.exp(-2.0 * times), rtol=1e-10)
        np.testing.assert_array_equal(result.increments.raw_increments, 0.0)

    def test_observations_on_dyadic_grid(self):
        result = simulate(ExperimentConfig(seed=5, n=3, T=2.0))
        assert result.observations.N == 16
        assert result.observations.partition.level == 3


class TestPipelines:

    def test_inversion_recovers_driver(self):
        cfg = ExperimentConfig(model='nonlinear2d', theta={'omega': 0.8}, y0=[0.3, -0.5], seed=3, n=4)
        sim = simulate(cfg)
        payload = run_inversion(cfg, sim.observations, sim.driver)
        assert payload['max_abs_error'] < 1e-8
        assert len(payload['increments']) == 16
        assert min(payload['newton_iters']) >= 1

    def test_rectangular_inversion_needs_driver(self):
        cfg = ExperimentConfig(model='decoupled_driver', seed=3, n=3)
        sim = simulate(cfg)
        with pytest.raises(ConfigError, match="supply the driver CSV"):
            run_inversion(cfg, sim.observations)

    def test_loglik_matches_closed_form(self, fou_data):
        cfg = ExperimentConfig(theta={'lam': 0.8, 'sigma': 1.2})
        payload = run_loglik(cfg, fou_data)
        expected = fou_loglik(fou_data, FouParams.on_grid(0.8, 1.2, fou_data.partition))
        assert payload['loglik'] == approx(expected, rel=1e-9)

    def test_marginal_loglik_needs_seed(self, fou_data):
        cfg = ExperimentConfig(model='decoupled_driver')
        with pytest.raises(ConfigError, match="needs a seed"):
            run_loglik(cfg, fou_data)

    def test_mle_reports_analytic_estimators(self):
        obs, _ = simulate_fou(6, T=16.0, seed=17)
        sigma2_hat, lam_hat = fou_mle(obs)
        sigma_hat = np.sqrt(sigma2_hat)
        cfg = ExperimentConfig(n=6, T=16.0, theta_grid={
            'sigma': list(np.linspace(sigma_hat - 0.23, sigma_hat + 0.17, 9)),
            'lam': list(np.linspace(lam_hat - 0.93, lam_hat + 0.87, 10)),
        })
        payload = run_mle(cfg, obs)
        assert payload['analytic'] == approx({'sigma2_hat': sigma2_hat, 'lam_hat': lam_hat})
        assert payload['theta_hat']['sigma'] ** 2 == approx(sigma2_hat, rel=0, abs=1e-9)
        assert payload['theta_hat']['lam'] == approx(lam_hat, rel=0, abs=1e-9)

    def test_mle_needs_grid(self, fou_data):
        with pytest.raises(ConfigError, match="theta grid"):
            run_mle(ExperimentConfig(), fou_data)


class TestConvergence:

    def test_report_levels_must_increase(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            ConvergenceReport(levels=[3, 2], n_values=[8, 4], sup_gap=[0.1, 0.2],
                              d_p=[0.1, 0.2], slope=None, n_ref=8, p=2.5)

    def test_n_ref_lower_bound(self):
        cfg = ExperimentConfig(seed=1, levels=(2, 4), n_ref=6, theta_grid={'lam': [0.5, 1.0]})
        with pytest.raises(ConfigError, match="n_ref=6 must be at least"):
            run_convergence(cfg)

    def test_levels_required(self):
        with pytest.raises(ConfigError, match="level range"):
            run_convergence(ExperimentConfig(seed=1, theta_grid={'lam': [0.5, 1.0]}))

    def test_pure_integrator_has_no_gap(self):
        # projection agrees with the fine driver on D(n), and so does the linear response
        cfg = ExperimentConfig(model='pure_integrator', theta={'sigma': 1.0}, seed=1,
                               levels=(2, 4), n_ref=8, theta_grid={'sigma': [0.5, 1.0, 1.5]})
        report = run_convergence(cfg)
        assert report.complete
        assert report.levels == [2, 3, 4]
        assert report.n_values == [4, 8, 16]
        assert max(report.sup_gap) < 1e-8
        assert all(dp > 0 for dp in report.d_p)
        assert report.to_dict()['N'] == [4, 8, 16]
        assert len(report.plot_rows()) == 3

    def test_flow_failure_marks_level(self, monkeypatch):
        real_gap = experiment_service.likelihood_gap

        def failing_gap(observed, discrete, *args, **kwargs):
            if observed.N == 8:
                raise FlowError("non-finite state", substep=3)
            return real_gap(observed, discrete, *args, **kwargs)

        monkeypatch.setattr(experiment_service, 'likelihood_gap', failing_gap)
        cfg = ExperimentConfig(model='pure_integrator', theta={'sigma': 1.0}, seed=1,
                               levels=(2, 4), n_ref=8, theta_grid={'sigma': [0.5, 1.0]})
        report = run_convergence(cfg)
        assert not report.complete
        assert report.sup_gap[1] is None
        assert report.sup_gap[0] is not None and report.sup_gap[2] is not None
        assert report.failures[3] == {'error': 'FlowError', 'message': 'non-finite state', 'substep': 3}
        assert np.isnan(report.plot_rows()[1][1])

    @staticmethod
    def _fou_reports(seeds=range(10)):
        grid = {'lam': list(np.linspace(0.5, 1.5, 5)), 'sigma': list(np.linspace(0.5, 1.5, 5))}
        reports = [run_convergence(ExperimentConfig(seed=seed, levels=(4, 8), n_ref=12, theta_grid=grid))
                   for seed in seeds]
        assert all(report.complete for report in reports)
        return reports

    @pytest.mark.slow
    @pytest.mark.xfail(strict=False, reason=(
        "single-seed sup-gaps fluctuate level to level; strict monotone decay across "
        "levels 4..8 is not reached at n_ref=12 (see DESIGN.md, convergence study)"))
    def test_fou_gap_strictly_decreasing_for_most_seeds(self):
        reports = self._fou_reports()
        monotone = sum(all(b < a for a, b in zip(r.sup_gap, r.sup_gap[1:])) for r in reports)
        quartered = sum(r.sup_gap[-1] < r.sup_gap[0] / 4.0 for r in reports)
        assert monotone >= 8
        assert quartered >= 8

    @pytest.mark.slow
    def test_fou_gap_log_log_slope_negative(self):
        reports = self._fou_reports()
        assert sum(r.slope is not None and r.slope < 0 for r in reports) >= 8
