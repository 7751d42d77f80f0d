"""
Likelihood Service for RoughLik
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Exact log-likelihood of discretely observed responses to a piecewise-linear
fBm driver (square case), the Monte-Carlo marginal for extra driver
coordinates, and the multi-level regression that recovers scale components.
"""

from dataclasses import dataclass, field as dataclass_field
from functools import partial
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import warnings

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from roughlik.config import get_active_config
from roughlik.extensions import parallel_map
from roughlik.utils import FlowError, InversionError, LikelihoodError, ScaleFitError
from roughlik.utils.fbm_model import CovFactor, FbmIncrementModel, log_density
from roughlik.utils.flow_engine import ParametricVectorField, Theta
from roughlik.utils.fou_reference import fou_scaled_components
from roughlik.utils.inverse_ito import (
    NewtonOptions, ObservationSet, invert_dataset, jacobian_log_det,
)

logger = logging.getLogger(__name__)

Noise = Union[FbmIncrementModel, CovFactor]
Component = Callable[[ObservationSet, Theta], float]


def _cov_factor(noise: Noise, n_intervals: int) -> CovFactor:
    factor = noise.factor if isinstance(noise, FbmIncrementModel) else noise
    if factor.n != n_intervals:
        raise LikelihoodError(f"Noise model covers {factor.n} intervals, observations have {n_intervals}")
    return factor


@dataclass(frozen=True, eq=False)
class LikelihoodBreakdown:
    """Log-likelihood with its density and change-of-variables parts"""
    theta: Dict[str, float]
    loglik: float
    density_term: float
    jacobian_term: float
    per_interval: np.ndarray
    newton_iters: np.ndarray

    def to_dict(self) -> dict:
        return {
            'theta': dict(self.theta),
            'loglik': self.loglik,
            'jacobian_term': self.jacobian_term,
            'density_term': self.density_term,
            'per_interval': [float(v) for v in self.per_interval],
        }


def evaluate_log_likelihood(obs: ObservationSet, theta: Theta, field: ParametricVectorField,
                            noise: Noise, opts: Optional[NewtonOptions] = None) -> LikelihoodBreakdown:
    """
    log L(y | theta) = log p_X(I^{-1}(y)) - sum_i log |det Z_i|, with its parts

    per_interval holds the Jacobian contribution -log |det Z_i| of each interval.
    """
    if field.m != field.d:
        raise LikelihoodError(f"Field '{field.name}' has m={field.m} > d={field.d}; "
                              f"use log_likelihood_marginal")
    factor = _cov_factor(noise, obs.N)

    result = invert_dataset(obs, theta, field, opts)
    density_term = log_density(result.increments, factor)
    jacobian_term = jacobian_log_det(result)

    return LikelihoodBreakdown(
        theta={k: float(v) for k, v in theta.items()},
        loglik=density_term + jacobian_term,
        density_term=density_term,
        jacobian_term=jacobian_term,
        per_interval=-np.log(result.z_dets),
        newton_iters=result.newton_iters,
    )


def log_likelihood(obs: ObservationSet, theta: Theta, field: ParametricVectorField,
                   noise: Noise, opts: Optional[NewtonOptions] = None) -> float:
    """Exact log-likelihood of the observations in the square case m = d"""
    return evaluate_log_likelihood(obs, theta, field, noise, opts).loglik


def conditional_log_likelihood(obs: ObservationSet, theta: Theta, field: ParametricVectorField,
                               noise: Noise, fixed_increments,
                               free_coords: Optional[Sequence[int]] = None,
                               opts: Optional[NewtonOptions] = None) -> float:
    """
    Log-likelihood given the increments of the driver coordinates not solved for

    Driver coordinates are independent, so the conditional density of the
    solved coordinates is their marginal fBm density.
    """
    factor = _cov_factor(noise, obs.N)
    result = invert_dataset(obs, theta, field, opts,
                            fixed_increments=fixed_increments, free_coords=free_coords)
    solved = result.increments.raw_increments[:, list(result.free_coords)]
    return log_density(solved, factor) + jacobian_log_det(result)


@dataclass(frozen=True)
class MarginalLogLik:
    """Monte-Carlo estimate of the marginal log-likelihood"""
    value: float
    mc_stderr: float
    n_samples: int
    n_failed: int
    high_failure_rate: bool


def _default_sampler(factor: CovFactor, n_fixed: int):
    def sampler(rng: np.random.Generator) -> np.ndarray:
        return factor.chol @ rng.standard_normal((factor.n, n_fixed))
    return sampler


def _marginal_sample(child_seed, obs, theta, field, factor, sampler, free_coords, opts):
    rng = np.random.default_rng(child_seed)
    fixed = sampler(rng)
    try:
        return conditional_log_likelihood(obs, theta, field, factor, fixed, free_coords, opts)
    except (InversionError, FlowError) as e:
        logger.debug(f"Marginal sample rejected: {e}")
        return None


def log_likelihood_marginal(obs: ObservationSet, theta: Theta, field: ParametricVectorField,
                            noise: Noise,
                            free_coord_sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None,
                            mc_samples: Optional[int] = None, seed: int = 0,
                            free_coords: Optional[Sequence[int]] = None,
                            opts: Optional[NewtonOptions] = None,
                            max_workers: Optional[int] = None) -> MarginalLogLik:
    """
    Marginal log-likelihood for m > d by averaging over the unsolved driver coordinates

    Args:
        obs: Observations
        theta: Parameter mapping
        field: Field with m > d
        noise: fBm increment law shared by every driver coordinate
        free_coord_sampler: Draws the (N, m - d) increments of the coordinates
            that are integrated out; defaults to their fBm law
        mc_samples: Number of Monte-Carlo samples
        seed: Root seed; sample s uses its own spawned stream
        free_coords: Driver coordinates solved for by Newton (default: first d)

    Returns:
        MarginalLogLik with log-mean-exp value and delta-method standard error
        of the log estimate. Failed inversions count as zero weight.
    """
    if field.m <= field.d:
        raise LikelihoodError(f"Field '{field.name}' is square; use log_likelihood")
    active = get_active_config()
    mc_samples = int(mc_samples or active.MC_SAMPLES)
    if mc_samples < 2:
        raise ValueError(f"Need at least two Monte-Carlo samples, got {mc_samples}")

    factor = _cov_factor(noise, obs.N)
    sampler = free_coord_sampler or _default_sampler(factor, field.m - field.d)
    children = np.random.SeedSequence(seed).spawn(mc_samples)

    work = partial(_marginal_sample, obs=obs, theta=theta, field=field, factor=factor,
                   sampler=sampler, free_coords=free_coords, opts=opts)
    values = parallel_map(work, children, max_workers)

    logs = np.array([v for v in values if v is not None])
    n_failed = mc_samples - logs.size
    if logs.size == 0:
        raise LikelihoodError(f"All {mc_samples} Monte-Carlo samples failed inversion")

    high_failure_rate = n_failed / mc_samples > active.MC_FAILURE_WARN_FRACTION
    if high_failure_rate:
        warnings.warn(f"{n_failed}/{mc_samples} marginal samples failed inversion", RuntimeWarning)
        logger.warning(f"Marginal likelihood: {n_failed}/{mc_samples} samples failed inversion")

    shift = float(np.max(logs))
    weights = np.zeros(mc_samples)
    weights[:logs.size] = np.exp(logs - shift)
    mean_weight = float(np.mean(weights))
    value = shift + float(np.log(mean_weight))
    stderr = float(np.std(weights, ddof=1) / (np.sqrt(mc_samples) * mean_weight))

    logger.debug(f"Marginal loglik {value:.6f} +/- {stderr:.2e} from {mc_samples} samples")
    return MarginalLogLik(value=value, mc_stderr=stderr, n_samples=mc_samples,
                          n_failed=n_failed, high_failure_rate=high_failure_rate)


@dataclass(frozen=True, eq=False)
class ScaledLogLik:
    """
    Scale decomposition sum_k l_k(y | theta) N^{-alpha_k}

    Each component is a callable (obs, theta) -> float.
    """
    exponents: Tuple[float, ...]
    components: Tuple[Component, ...]
    remainder_bound: Optional[float] = None

    def __post_init__(self):
        exponents = tuple(float(a) for a in self.exponents)
        if len(exponents) != len(self.components) or not exponents:
            raise ValueError("Need one exponent per component")
        if any(b <= a for a, b in zip(exponents, exponents[1:])):
            raise ValueError(f"Exponents must be strictly increasing, got {exponents}")
        object.__setattr__(self, 'exponents', exponents)
        object.__setattr__(self, 'components', tuple(self.components))

    @property
    def order_count(self) -> int:
        return len(self.exponents)

    def component(self, k: int, obs: ObservationSet, theta: Theta) -> float:
        return float(self.components[k](obs, theta))

    def scaled_component(self, k: int, obs: ObservationSet, theta: Theta) -> float:
        """l_k N^{-alpha_k}, the term entering the stage-k likelihood"""
        return self.component(k, obs, theta) * float(obs.N) ** (-self.exponents[k])

    def reconstruct(self, obs: ObservationSet, theta: Theta) -> float:
        return sum(self.scaled_component(k, obs, theta) for k in range(self.order_count))


def fou_scaled_loglik() -> ScaledLogLik:
    """The two normalised fOU components with exponents (-1, 0)"""
    def order_zero(obs, theta):
        return fou_scaled_components(obs, theta['lam'], theta['sigma'])[0]

    def order_one(obs, theta):
        return fou_scaled_components(obs, theta['lam'], theta['sigma'])[1]

    return ScaledLogLik(exponents=(-1.0, 0.0), components=(order_zero, order_one))


def _theta_key(theta: Theta) -> tuple:
    return tuple(sorted((k, float(v)) for k, v in theta.items()))


@dataclass(frozen=True, eq=False)
class ScaleDecomposition:
    """Fitted component values per theta grid point plus the remainder diagnostics"""
    exponents: Tuple[float, ...]
    levels: Tuple[int, ...]
    n_values: np.ndarray
    thetas: List[Dict[str, float]]
    coefficients: np.ndarray
    residuals: np.ndarray
    remainder_slopes: List[Optional[float]] = dataclass_field(default_factory=list)

    @property
    def remainder_slope(self) -> Optional[float]:
        finite = [s for s in self.remainder_slopes if s is not None]
        return float(np.median(finite)) if finite else None

    def as_scaled_loglik(self, grid: Optional[Mapping[str, Sequence[float]]] = None) -> ScaledLogLik:
        """
        Fitted components as a ScaledLogLik

        With grid (name -> axis values, thetas in C order of the axes) the
        components are interpolated multilinearly so they can be evaluated
        between grid points; otherwise only the fitted points are available.
        """
        if grid is not None:
            names = list(grid)
            axes = tuple(np.asarray(grid[n], dtype=float) for n in names)
            shape = tuple(a.size for a in axes)
            interpolators = [
                RegularGridInterpolator(axes, self.coefficients[:, k].reshape(shape))
                for k in range(len(self.exponents))
            ]

            def interpolated(k):
                def component(obs, theta):
                    return float(interpolators[k]([[theta[n] for n in names]])[0])
                return component

            return ScaledLogLik(self.exponents, tuple(interpolated(k) for k in range(len(self.exponents))))

        table = {_theta_key(t): row for t, row in zip(self.thetas, self.coefficients)}

        def lookup(k):
            def component(obs, theta):
                try:
                    return float(table[_theta_key(theta)][k])
                except KeyError:
                    raise ScaleFitError(f"No fitted component at theta={dict(theta)}") from None
            return component

        return ScaledLogLik(self.exponents, tuple(lookup(k) for k in range(len(self.exponents))))

    def to_dict(self) -> dict:
        return {
            'alpha': list(self.exponents),
            'levels': list(self.levels),
            'components_on_grid': [
                {'theta': t, 'components': [float(c) for c in row]}
                for t, row in zip(self.thetas, self.coefficients)
            ],
            'remainder_slope': self.remainder_slope,
        }


def _remainder_slope(values: np.ndarray, n_values: np.ndarray, exponents, residuals) -> Optional[float]:
    """
    Log-log decay slope of whatever the declared powers do not explain

    On geometric levels N_j = N_0 r^j the filter prod_k (E - r^{-alpha_k})
    (E the level shift) annihilates every declared power exactly and maps a
    remainder term C N^{-beta} to a multiple of N^{-beta}. Otherwise the fit
    residuals are used directly.
    """
    ratios = n_values[1:] / n_values[:-1]
    scale = max(float(np.max(np.abs(values))), 1.0)

    if ratios.size and np.allclose(ratios, ratios[0], rtol=1e-12):
        weights = np.poly(ratios[0] ** (-np.asarray(exponents)))
        filtered = np.convolve(values, weights, mode='valid')
        grid = n_values[:filtered.size]
    else:
        filtered = residuals
        grid = n_values

    keep = np.abs(filtered) > 1e-11 * scale
    if np.count_nonzero(keep) < 2:
        return None
    slope, _ = np.polyfit(np.log(grid[keep]), np.log(np.abs(filtered[keep])), 1)
    return float(slope)


def _evaluate_cell(cell, evaluator, obs_per_level):
    level, theta = cell
    return float(evaluator(obs_per_level[level], theta))


def decompose_scales(loglik_evaluator: Callable[[ObservationSet, Theta], float],
                     obs_per_level: Mapping[int, ObservationSet],
                     exponents: Sequence[float],
                     theta_grid: Sequence[Theta],
                     max_workers: Optional[int] = None) -> ScaleDecomposition:
    """
    Recover scale components by least squares across levels

    For every theta the evaluations v_j = loglik(y_{D(n_j)} | theta) are fitted
    by sum_k l_k N_j^{-alpha_k}. Coefficients are the raw fitted l_k.

    Raises:
        ScaleFitError: fewer levels than coefficients or a rank-deficient design
    """
    exponents = tuple(float(a) for a in exponents)
    if any(b <= a for a, b in zip(exponents, exponents[1:])):
        raise ValueError(f"Exponents must be strictly increasing, got {exponents}")
    levels = tuple(sorted(obs_per_level))
    n_values = np.array([obs_per_level[n].N for n in levels], dtype=float)
    K = len(exponents)

    if len(levels) < K + 1:
        raise ScaleFitError(f"{len(levels)} levels cannot determine {K} coefficients "
                            f"and a remainder; supply at least {K + 1}")
    design = n_values[:, None] ** (-np.asarray(exponents))[None, :]
    column_scale = np.linalg.norm(design, axis=0)
    normalized = design / column_scale
    if np.linalg.matrix_rank(normalized) < K:
        raise ScaleFitError("Scale design matrix is rank deficient; use levels with distinct N")

    thetas = [dict(t) for t in theta_grid]
    cells = [(level, theta) for theta in thetas for level in levels]
    values = np.array(parallel_map(
        partial(_evaluate_cell, evaluator=loglik_evaluator, obs_per_level=obs_per_level),
        cells, max_workers,
    )).reshape(len(thetas), len(levels))

    solution, *_ = np.linalg.lstsq(normalized, values.T, rcond=None)
    coefficients = (solution / column_scale[:, None]).T
    residuals = values - coefficients @ design.T

    slopes = [_remainder_slope(values[p], n_values, exponents, residuals[p]) for p in range(len(thetas))]

    logger.info(f"Scale decomposition: {len(thetas)} grid points, levels {levels[0]}..{levels[-1]}, "
                f"alpha={list(exponents)}")
    return ScaleDecomposition(
        exponents=exponents, levels=levels, n_values=n_values, thetas=thetas,
        coefficients=coefficients, residuals=residuals, remainder_slopes=slopes,
    )


def _gap_cell(theta, obs_a, obs_b, field, noise, opts):
    return abs(log_likelihood(obs_a, theta, field, noise, opts)
               - log_likelihood(obs_b, theta, field, noise, opts))


def likelihood_gap(obs_a: ObservationSet, obs_b: ObservationSet, theta_grid: Sequence[Theta],
                   field: ParametricVectorField, noise: Noise,
                   opts: Optional[NewtonOptions] = None,
                   max_workers: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """
    sup over the grid of |l(obs_a | theta) - l(obs_b | theta)|

    Returns:
        (sup_gap, per-theta gaps)
    """
    if not obs_a.partition.same_as(obs_b.partition):
        raise LikelihoodError("Likelihood gap needs both datasets on the same grid")
    gaps = np.array(parallel_map(
        partial(_gap_cell, obs_a=obs_a, obs_b=obs_b, field=field, noise=noise, opts=opts),
        [dict(t) for t in theta_grid], max_workers,
    ))
    return float(np.max(gaps)), gaps
