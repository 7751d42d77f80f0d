"""
RoughLik Experiment Commands
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""
# roughlik/commands/experiments.py

import os
import logging

import click

from roughlik.commands import experiment_options, handle_errors
from roughlik.config import get_active_config
from roughlik.services.experiment_service import (
    ExperimentConfig, parse_levels, parse_theta, parse_theta_grid, run_convergence,
    run_inversion, run_loglik, run_mle, run_posterior, simulate as run_simulation,
)
from roughlik.utils import ConfigError
from roughlik.utils.file_handler import (
    DRIVER_PREFIX, content_hash, read_driver_csv, read_json, read_observations_csv,
    write_json, write_path_csv, write_rows_csv,
)
from roughlik.version import get_version_info

logger = logging.getLogger(__name__)


def build_experiment(config_path=None, seed=None, out=None, model=None, h=None, levels=None,
                     theta_grid=None, theta_values=None, level=None, horizon=None, steps=None):
    """ExperimentConfig from the JSON file (if any) with command-line overrides applied"""
    cfg = ExperimentConfig.from_dict(read_json(config_path)) if config_path else ExperimentConfig()

    theta = None
    if theta_values:
        theta = dict(cfg.theta) if model is None else {}
        theta.update(parse_theta(theta_values))

    return cfg.with_overrides(
        seed=seed, out=out, model=model, h=h,
        levels=parse_levels(levels) if levels else None,
        theta_grid=parse_theta_grid(theta_grid) if theta_grid else None,
        theta=theta, n=level, T=horizon, steps_per_interval=steps,
    )


def output_dir(cfg):
    return cfg.out or get_active_config().OUTPUT_DIR


def _envelope(cfg, inputs, result):
    """Result JSON: config echo, input hashes and the task result"""
    return {
        'config': cfg.to_dict(),
        'inputs': {path: content_hash(path) for path in inputs},
        'version': get_version_info()['version'],
        'result': result,
    }


def _load_observations(cfg, observations):
    path = observations or cfg.observations
    if not path:
        raise ConfigError("No observation CSV given (--observations or 'observations' in the config)")
    return path, read_observations_csv(path)


def _load_driver(cfg, driver):
    path = driver or cfg.driver
    return (path, read_driver_csv(path)) if path else (None, None)


@click.command()
@click.option('--zero-noise', is_flag=True, help='Use an identically zero driver (debugging)')
@experiment_options
@handle_errors
def simulate(zero_noise, **options):
    """Sample an fBm driver and write the driver and observation CSVs"""
    cfg = build_experiment(**options)
    if zero_noise:
        cfg = cfg.with_overrides(zero_noise=True)

    result = run_simulation(cfg)
    out = output_dir(cfg)
    obs_path = write_path_csv(os.path.join(out, 'observations.csv'), result.observations.as_path())
    driver_path = write_path_csv(os.path.join(out, 'driver.csv'), result.driver, prefix=DRIVER_PREFIX)
    write_json(os.path.join(out, 'simulate.json'), _envelope(cfg, [], {
        'observations': content_hash(obs_path),
        'driver': content_hash(driver_path),
        'N': result.observations.N,
    }))
    click.echo(f"Simulated {result.observations.N} intervals -> {obs_path}")


@click.command()
@click.option('--observations', type=click.Path(dir_okay=False), help='Observation CSV')
@click.option('--driver', type=click.Path(dir_okay=False), help='Driver CSV (fixed coordinates / error report)')
@experiment_options
@handle_errors
def invert(observations, driver, **options):
    """Recover driver increments from observations"""
    cfg = build_experiment(**options)
    obs_path, obs = _load_observations(cfg, observations)
    driver_path, driver_path_values = _load_driver(cfg, driver)

    result = run_inversion(cfg, obs, driver_path_values)
    inputs = [obs_path] + ([driver_path] if driver_path else [])
    target = write_json(os.path.join(output_dir(cfg), 'invert.json'), _envelope(cfg, inputs, result))
    click.echo(f"Inverted {obs.N} intervals -> {target}")


@click.command()
@click.option('--observations', type=click.Path(dir_okay=False), help='Observation CSV')
@experiment_options
@handle_errors
def loglik(observations, **options):
    """Evaluate the log-likelihood at the config theta"""
    cfg = build_experiment(**options)
    obs_path, obs = _load_observations(cfg, observations)

    result = run_loglik(cfg, obs)
    write_json(os.path.join(output_dir(cfg), 'loglik.json'), _envelope(cfg, [obs_path], result))
    click.echo(f"loglik = {result['loglik']:.12g}")


@click.command()
@click.option('--observations', type=click.Path(dir_okay=False), help='Observation CSV')
@experiment_options
@handle_errors
def mle(observations, **options):
    """Hierarchical maximum likelihood over the theta grid"""
    cfg = build_experiment(**options)
    obs_path, obs = _load_observations(cfg, observations)

    result = run_mle(cfg, obs)
    write_json(os.path.join(output_dir(cfg), 'mle.json'), _envelope(cfg, [obs_path], result))
    for record in result['estimates']:
        flag = ' (grid boundary)' if record['stage_argmax_on_boundary'] else ''
        click.echo(f"{record['coordinate']} [order {record['order']}] = {record['estimate']:.10g}{flag}")


@click.command()
@click.option('--observations', type=click.Path(dir_okay=False), help='Observation CSV')
@experiment_options
@handle_errors
def posterior(observations, **options):
    """Staged posterior on the theta grid"""
    cfg = build_experiment(**options)
    obs_path, obs = _load_observations(cfg, observations)

    staged, summary = run_posterior(cfg, obs)
    out = output_dir(cfg)
    write_rows_csv(os.path.join(out, 'posterior.csv'), staged.header(), staged.to_rows())
    write_json(os.path.join(out, 'posterior.json'), _envelope(cfg, [obs_path], summary))
    click.echo(f"Posterior mode: {summary['mode']}")


@click.command()
@click.option('--n-ref', 'n_ref', type=int, help='Reference level of the fine driver')
@experiment_options
@handle_errors
def converge(n_ref, **options):
    """Likelihood gap between fine-driver and projected-driver data across dyadic levels"""
    cfg = build_experiment(**options)
    if n_ref is not None:
        cfg = cfg.with_overrides(n_ref=n_ref)

    report = run_convergence(cfg)
    out = output_dir(cfg)
    write_json(os.path.join(out, 'converge.json'), _envelope(cfg, [], report.to_dict()))
    write_rows_csv(os.path.join(out, 'converge_plot.csv'), ['level', 'sup_gap', 'd_p'], report.plot_rows())

    for level, gap in zip(report.levels, report.sup_gap):
        click.echo(f"level {level}: sup_gap = {gap if gap is None else format(gap, '.6g')}")
    if not report.complete:
        click.echo(f"Partial report: levels {sorted(report.failures)} failed", err=True)
