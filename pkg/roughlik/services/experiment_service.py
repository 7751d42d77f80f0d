"""
Experiment Service for RoughLik
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Experiment configuration and the pipelines behind the command-line harness:
simulation, inversion, likelihood evaluation, estimation, staged posterior
and the dyadic-refinement convergence study.
"""

from dataclasses import asdict, dataclass, field as dataclass_field, fields, replace
from functools import partial
from typing import Dict, List, Optional, Tuple
import logging
import re

import numpy as np

from roughlik.config import get_active_config
from roughlik.extensions import parallel_map
from roughlik.models import FIELD_REGISTRY, get_field
from roughlik.services.estimator_service import (
    ParameterSpace, hierarchical_mle, posterior_orders, staged_posterior,
)
from roughlik.services.likelihood_service import (
    ScaledLogLik, decompose_scales, evaluate_log_likelihood, fou_scaled_loglik,
    likelihood_gap, log_likelihood, log_likelihood_marginal,
)
from roughlik.utils import ConfigError, FlowError, GridError, InversionError
from roughlik.utils.fbm_model import FbmIncrementModel
from roughlik.utils.flow_engine import respond
from roughlik.utils.fou_reference import fou_mle
from roughlik.utils.grid_path import (
    IncrementSet, PiecewiseLinearPath, dyadic_grid, increments, p_variation_distance,
    refine, restrict,
)
from roughlik.utils.inverse_ito import NewtonOptions, ObservationSet, invert_dataset

logger = logging.getLogger(__name__)

_GRID_ITEM = re.compile(r'^\s*([A-Za-z_]\w*)\s*=\s*([^:]+):([^:]+):(\d+)\s*$')
_LEVELS = re.compile(r'^\s*(\d+)\s*\.\.\s*(\d+)\s*$')


def parse_theta_grid(spec: str) -> Dict[str, List[float]]:
    """
    Parse 'name=lo:hi:count,...' into evenly spaced axes

    Example: 'lam=0.5:1.5:5,sigma=0.5:1.5:5'
    """
    grid = {}
    for item in filter(None, (s.strip() for s in spec.split(','))):
        match = _GRID_ITEM.match(item)
        if not match:
            raise ConfigError(f"Invalid theta-grid entry '{item}', expected name=lo:hi:count")
        name, lo, hi, count = match.groups()
        try:
            lo, hi = float(lo), float(hi)
        except ValueError:
            raise ConfigError(f"Invalid bounds in theta-grid entry '{item}'") from None
        count = int(count)
        if count < 2 or not hi > lo:
            raise ConfigError(f"theta-grid entry '{item}' needs hi > lo and count >= 2")
        grid[name] = [float(v) for v in np.linspace(lo, hi, count)]
    if not grid:
        raise ConfigError("Empty theta grid")
    return grid


def parse_theta(spec: str) -> Dict[str, float]:
    """Parse 'name=value,...' into a parameter point"""
    theta = {}
    for item in filter(None, (s.strip() for s in spec.split(','))):
        name, sep, value = item.partition('=')
        try:
            if not sep or not name.strip():
                raise ValueError
            theta[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"Invalid theta entry '{item}', expected name=value") from None
    return theta


def parse_levels(spec: str) -> Tuple[int, int]:
    """Parse 'A..B' into an inclusive level range"""
    match = _LEVELS.match(spec)
    if not match:
        raise ConfigError(f"Invalid level range '{spec}', expected A..B")
    first, last = int(match.group(1)), int(match.group(2))
    if last < first:
        raise ConfigError(f"Level range '{spec}' is empty")
    return first, last


@dataclass
class ExperimentConfig:
    """One experiment: model, noise, grid and task settings; loaded from JSON, overridable by flags"""
    model: str = 'fou'
    theta: Dict[str, float] = dataclass_field(default_factory=lambda: {'lam': 1.0, 'sigma': 1.0})
    model_options: Dict[str, int] = dataclass_field(default_factory=dict)
    h: float = 0.5
    seed: Optional[int] = None
    n: int = 6
    T: float = 1.0
    y0: Optional[List[float]] = None
    zero_noise: bool = False
    steps_per_interval: Optional[int] = None
    levels: Optional[Tuple[int, int]] = None
    n_ref: Optional[int] = None
    theta_grid: Optional[Dict[str, List[float]]] = None
    exponents: List[float] = dataclass_field(default_factory=lambda: [-1.0, 0.0])
    mc_samples: Optional[int] = None
    free_coords: Optional[List[int]] = None
    observations: Optional[str] = None
    driver: Optional[str] = None
    out: Optional[str] = None

    @classmethod
    def from_dict(cls, payload: dict) -> 'ExperimentConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        values = dict(payload)
        if isinstance(values.get('levels'), str):
            values['levels'] = parse_levels(values['levels'])
        elif values.get('levels') is not None:
            values['levels'] = tuple(int(v) for v in values['levels'])
        if isinstance(values.get('theta_grid'), str):
            values['theta_grid'] = parse_theta_grid(values['theta_grid'])
        return cls(**values)

    def with_overrides(self, **overrides) -> 'ExperimentConfig':
        """Copy with every non-None override applied"""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def build_field(self):
        try:
            return get_field(self.model, **self.model_options)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e

    @property
    def steps(self) -> int:
        return int(self.steps_per_interval or get_active_config().RK4_SUBSTEPS)

    @property
    def newton_options(self) -> NewtonOptions:
        return NewtonOptions.from_config(get_active_config(), steps=self.steps)

    def initial_state(self, d: int) -> np.ndarray:
        if self.y0 is None:
            return np.zeros(d)
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if y0.shape != (d,):
            raise ConfigError(f"y0 must have {d} entries, got {y0.size}")
        return y0

    def parameter_space(self, field) -> ParameterSpace:
        if not self.theta_grid:
            raise ConfigError("This task needs a theta grid (--theta-grid name=lo:hi:count,...)")
        names = list(self.theta_grid)
        unknown = [n for n in names if n not in field.param_names]
        if unknown:
            raise ConfigError(f"theta-grid names {unknown} are not parameters of '{field.name}'")
        return ParameterSpace(names, self.theta_grid)

    def grid_points(self, field) -> List[Dict[str, float]]:
        """Theta-grid points, completed with the config theta for coordinates not on the grid"""
        points = []
        for point in self.parameter_space(field).points():
            theta = dict(self.theta)
            theta.update(point)
            points.append(theta)
        return points

    def validate(self, require_seed: bool = False):
        """
        Check the config before any work is done

        Raises:
            ConfigError: unknown model, invalid theta, non-dyadic grid, missing seed
        """
        if self.model not in FIELD_REGISTRY:
            raise ConfigError(f"Unknown model id '{self.model}' (registered: {', '.join(sorted(FIELD_REGISTRY))})")
        field = self.build_field()
        try:
            field.check_theta(self.theta)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not 0.0 < self.h < 1.0:
            raise ConfigError(f"h must lie in (0, 1), got {self.h}")
        if require_seed and self.seed is None:
            raise ConfigError("A seed is required (--seed); wall-clock seeding is not supported")
        if self.steps < 1:
            raise ConfigError(f"steps_per_interval must be >= 1, got {self.steps}")
        try:
            dyadic_grid(self.n, self.T)
            if self.levels is not None:
                for level in range(self.levels[0], self.levels[1] + 1):
                    dyadic_grid(level, self.T)
        except GridError as e:
            raise ConfigError(str(e)) from e
        self.initial_state(field.d)
        return field

    def to_dict(self) -> dict:
        payload = asdict(self)
        if self.levels is not None:
            payload['levels'] = list(self.levels)
        return payload


@dataclass(frozen=True, eq=False)
class SimulationResult:
    driver: PiecewiseLinearPath
    observations: ObservationSet

    @property
    def increments(self) -> IncrementSet:
        return increments(self.driver)


def _sample_driver(cfg: ExperimentConfig, m: int, level: int) -> PiecewiseLinearPath:
    partition = dyadic_grid(level, cfg.T)
    if cfg.zero_noise:
        incs = IncrementSet(partition, np.zeros((partition.n_intervals, m)))
    else:
        incs = FbmIncrementModel(cfg.h, partition).sample(cfg.seed, dim=m)
    return incs.cumulate()


def simulate(cfg: ExperimentConfig) -> SimulationResult:
    """Seeded fBm driver on D(n) and the response of the configured field"""
    field = cfg.validate(require_seed=not cfg.zero_noise)
    driver = _sample_driver(cfg, field.m, cfg.n)
    response = respond(cfg.initial_state(field.d), driver, cfg.theta, field, cfg.steps)
    logger.info(f"Simulated '{cfg.model}' on {driver.partition!r} with seed {cfg.seed}")
    return SimulationResult(driver=driver, observations=ObservationSet.from_path(response))


def _fixed_increments(field, result_free, driver: Optional[PiecewiseLinearPath], obs: ObservationSet):
    if field.m == field.d:
        return None
    if driver is None:
        raise ConfigError(f"Model '{field.name}' has m > d; supply the driver CSV for the fixed coordinates")
    if not driver.partition.same_as(obs.partition):
        raise ConfigError("Driver and observations must share the grid")
    fixed = np.setdiff1d(np.arange(field.m), result_free)
    return increments(driver).raw_increments[:, fixed]


def run_inversion(cfg: ExperimentConfig, obs: ObservationSet,
                  driver: Optional[PiecewiseLinearPath] = None) -> dict:
    """Invert a dataset; reports the recovery error when the true driver is known"""
    field = cfg.validate()
    free = cfg.free_coords if cfg.free_coords is not None else list(range(field.d))
    fixed = _fixed_increments(field, free, driver, obs)
    result = invert_dataset(obs, cfg.theta, field, cfg.newton_options,
                            fixed_increments=fixed, free_coords=cfg.free_coords)

    payload = {
        'increments': result.increments.raw_increments.tolist(),
        'z_dets': result.z_dets.tolist(),
        'newton_iters': result.newton_iters.tolist(),
        'max_residual': float(result.residuals.max()),
    }
    if driver is not None:
        truth = increments(driver).raw_increments
        payload['max_abs_error'] = float(np.max(np.abs(result.increments.raw_increments - truth)))
    return payload


def run_loglik(cfg: ExperimentConfig, obs: ObservationSet) -> dict:
    field = cfg.validate()
    noise = FbmIncrementModel(cfg.h, obs.partition)
    if field.m == field.d:
        return evaluate_log_likelihood(obs, cfg.theta, field, noise, cfg.newton_options).to_dict()

    if cfg.seed is None:
        raise ConfigError("The marginal likelihood needs a seed for its Monte-Carlo samples")
    marginal = log_likelihood_marginal(obs, cfg.theta, field, noise, mc_samples=cfg.mc_samples,
                                       seed=cfg.seed, free_coords=cfg.free_coords,
                                       opts=cfg.newton_options)
    return {
        'theta': dict(cfg.theta),
        'loglik': marginal.value,
        'mc_stderr': marginal.mc_stderr,
        'mc_samples': marginal.n_samples,
        'mc_failed': marginal.n_failed,
        'high_failure_rate': marginal.high_failure_rate,
    }


def _level_observations(cfg: ExperimentConfig, obs: ObservationSet) -> Dict[int, ObservationSet]:
    if cfg.levels is None:
        raise ConfigError("Scale fitting needs a level range (--levels A..B)")
    path = obs.as_path()
    per_level = {}
    for level in range(cfg.levels[0], cfg.levels[1] + 1):
        try:
            per_level[level] = ObservationSet.from_path(restrict(path, dyadic_grid(level, cfg.T)))
        except GridError as e:
            raise ConfigError(f"Level {level} is not nested in the observation grid: {e}") from e
    return per_level


def scale_components(cfg: ExperimentConfig, obs: ObservationSet) -> ScaledLogLik:
    """Analytic components for fou, otherwise components fitted across the level range"""
    field = cfg.validate()
    if cfg.model == 'fou' and list(cfg.exponents) == [-1.0, 0.0]:
        return fou_scaled_loglik()

    space = cfg.parameter_space(field)
    opts = cfg.newton_options

    def evaluator(level_obs, theta):
        full = dict(cfg.theta)
        full.update(theta)
        return log_likelihood(level_obs, full, field, FbmIncrementModel(cfg.h, level_obs.partition), opts)

    fit = decompose_scales(evaluator, _level_observations(cfg, obs), cfg.exponents, space.points())
    return fit.as_scaled_loglik(space.grid)


def run_mle(cfg: ExperimentConfig, obs: ObservationSet) -> dict:
    field = cfg.validate()
    space = cfg.parameter_space(field)
    components = scale_components(cfg, obs)
    estimate = hierarchical_mle(components, space, obs)

    payload = {'estimates': estimate.to_dict(), 'theta_hat': estimate.estimates}
    if cfg.model == 'fou':
        sigma2_hat, lam_hat = fou_mle(obs)
        payload['analytic'] = {'sigma2_hat': sigma2_hat, 'lam_hat': lam_hat}
    return payload


def run_posterior(cfg: ExperimentConfig, obs: ObservationSet):
    """Staged posterior on the theta grid; returns (posterior, summary)"""
    field = cfg.validate()
    space = cfg.parameter_space(field)
    posterior = staged_posterior(scale_components(cfg, obs), space, None, obs)
    summary = {
        'mode': posterior.mode(),
        'orders': posterior_orders(posterior),
        'stages': posterior.stages,
    }
    return posterior, summary


@dataclass
class ConvergenceReport:
    """Per-level sup-gap over the theta grid and the driver distance d_p(pi_n(x), x)"""
    levels: List[int]
    n_values: List[int]
    sup_gap: List[Optional[float]]
    d_p: List[float]
    slope: Optional[float]
    n_ref: int
    p: float
    failures: Dict[int, dict] = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("Convergence levels must be strictly increasing")

    @property
    def complete(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            'levels': self.levels,
            'N': self.n_values,
            'sup_gap': self.sup_gap,
            'd_p': self.d_p,
            'p': self.p,
            'slope': self.slope,
            'n_ref': self.n_ref,
            'failures': {str(k): v for k, v in self.failures.items()},
        }

    def plot_rows(self) -> List[list]:
        return [[level, gap if gap is not None else float('nan'), dp]
                for level, gap, dp in zip(self.levels, self.sup_gap, self.d_p)]


def _fit_slope(n_values, gaps) -> Optional[float]:
    points = [(n, g) for n, g in zip(n_values, gaps) if g is not None and g > 0 and np.isfinite(g)]
    if len(points) < 2:
        return None
    n, g = np.array(points).T
    return float(np.polyfit(np.log(n), np.log(g), 1)[0])


def _converge_level(level, cfg, field, fine_driver, fine_response, thetas, p):
    coarse = dyadic_grid(level, cfg.T)
    projected = restrict(fine_driver, coarse)
    observed = ObservationSet.from_path(restrict(fine_response, coarse))
    d_p = p_variation_distance(refine(projected, fine_driver.partition), fine_driver, p)

    try:
        discrete = ObservationSet.from_path(
            respond(cfg.initial_state(field.d), projected, cfg.theta, field, cfg.steps))
        noise = FbmIncrementModel(cfg.h, coarse)
        sup_gap, _ = likelihood_gap(observed, discrete, thetas, field, noise,
                                    cfg.newton_options, max_workers=1)
        failure = None
    except InversionError as e:
        logger.warning(f"Level {level}: inversion failed on interval {e.interval}: {e}")
        sup_gap = None
        failure = {'error': type(e).__name__, 'message': str(e), 'interval': e.interval}
    except FlowError as e:
        logger.warning(f"Level {level}: flow failed at substep {e.substep}: {e}")
        sup_gap = None
        failure = {'error': type(e).__name__, 'message': str(e), 'substep': e.substep}
    return level, coarse.n_intervals, sup_gap, d_p, failure


def run_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    """
    Dyadic refinement study

    A fine driver x on D(n_ref) and its response y stand in for the rough
    driver and its response. For each level n the projection pi_n(x) is
    responded to again, and the likelihoods of y|D(n) and y(n)|D(n) are
    compared over the theta grid.
    """
    field = cfg.validate(require_seed=True)
    if cfg.levels is None:
        raise ConfigError("converge needs a level range (--levels A..B)")
    margin = get_active_config().REFERENCE_LEVEL_MARGIN
    n_ref = cfg.n_ref if cfg.n_ref is not None else cfg.levels[1] + margin
    if n_ref < cfg.levels[1] + margin:
        raise ConfigError(f"n_ref={n_ref} must be at least max(level) + {margin} = {cfg.levels[1] + margin}")
    try:
        dyadic_grid(n_ref, cfg.T)
    except GridError as e:
        raise ConfigError(str(e)) from e

    thetas = cfg.grid_points(field)
    p = get_active_config().PVAR_P

    fine_driver = _sample_driver(cfg, field.m, n_ref)
    fine_response = respond(cfg.initial_state(field.d), fine_driver, cfg.theta, field, cfg.steps)
    logger.info(f"Convergence study: reference level {n_ref}, levels {cfg.levels[0]}..{cfg.levels[1]}, "
                f"{len(thetas)} grid points")

    levels = list(range(cfg.levels[0], cfg.levels[1] + 1))
    rows = parallel_map(
        partial(_converge_level, cfg=cfg, field=field, fine_driver=fine_driver,
                fine_response=fine_response, thetas=thetas, p=p),
        levels,
    )

    failures = {level: failure for level, _, _, _, failure in rows if failure is not None}
    n_values = [n for _, n, _, _, _ in rows]
    gaps = [gap for _, _, gap, _, _ in rows]
    report = ConvergenceReport(
        levels=levels, n_values=n_values, sup_gap=gaps,
        d_p=[dp for _, _, _, dp, _ in rows],
        slope=_fit_slope(n_values, gaps), n_ref=n_ref, p=p, failures=failures,
    )
    logger.info(f"Convergence study done: sup_gap={gaps}, slope={report.slope}")
    return report
