"""
RoughLik Inverse Ito Map
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Interval-by-interval inversion of the Ito map: given consecutive observations
(y0, y1) find the driver increment whose response over the interval hits y1.
Intervals are independent given the observations, so a whole dataset is
solved as one batched Newton iteration.
"""

from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np

from roughlik.config import Config
from roughlik.utils import ConfigError, GridError, NonConvergenceError, SingularJacobianError
from roughlik.utils.flow_engine import ParametricVectorField, Theta, flow
from roughlik.utils.grid_path import IncrementSet, Partition, PiecewiseLinearPath

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonOptions:
    """Newton solver settings; defaults come from the active config"""
    tol_rel: float = Config.NEWTON_TOL_REL
    max_iter: int = Config.NEWTON_MAX_ITER
    max_halvings: int = Config.LINE_SEARCH_MAX_HALVINGS
    singular_rtol: float = Config.SINGULAR_DET_RTOL
    steps: int = Config.RK4_SUBSTEPS

    @classmethod
    def from_config(cls, config_class, **overrides):
        values = dict(
            tol_rel=config_class.NEWTON_TOL_REL,
            max_iter=config_class.NEWTON_MAX_ITER,
            max_halvings=config_class.LINE_SEARCH_MAX_HALVINGS,
            singular_rtol=config_class.SINGULAR_DET_RTOL,
            steps=config_class.RK4_SUBSTEPS,
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observations y_D on a partition; the first row is the known initial state"""
    partition: Partition
    y_values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.y_values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != len(self.partition):
            raise ValueError(f"Need one observation per grid time: {len(self.partition)} times, "
                             f"{values.shape[0]} observations")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, 'y_values', values)

    @classmethod
    def from_path(cls, path: PiecewiseLinearPath) -> 'ObservationSet':
        return cls(path.partition, path.values)

    def as_path(self) -> PiecewiseLinearPath:
        return PiecewiseLinearPath(self.partition, self.y_values)

    @property
    def dim(self) -> int:
        return self.y_values.shape[1]

    @property
    def N(self) -> int:
        return self.partition.n_intervals


@dataclass(frozen=True, eq=False)
class IncrementSolution:
    """Result of inverting a single interval"""
    slope: np.ndarray
    increment: np.ndarray
    z_slope: np.ndarray
    z_increment: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class InversionResult:
    """Driver increments recovered from a dataset plus the per-interval Jacobian data"""
    increments: IncrementSet
    z_dets: np.ndarray
    newton_iters: np.ndarray
    residuals: np.ndarray
    free_coords: tuple


def _free_split(field: ParametricVectorField, free_coords: Optional[Sequence[int]]):
    if free_coords is None:
        free = np.arange(field.d)
    else:
        free = np.asarray(sorted(free_coords), dtype=int)
    if free.size != field.d or np.any(free < 0) or np.any(free >= field.m) or np.unique(free).size != free.size:
        raise ConfigError(f"Need exactly d={field.d} distinct free driver coordinates in [0, {field.m}), got {[int(i) for i in free]}")
    fixed = np.setdiff1d(np.arange(field.m), free)
    return free, fixed


def _initial_guess(y0, y1, delta, theta, field, free, fixed, fixed_slopes):
    # c0 = b^+ ((y1 - y0)/delta - a(y0)); exact for constant-coefficient fields
    target = (y1 - y0) / delta[:, None] - field.a(y0, theta)
    b = field.b(y0, theta)
    c = np.zeros(y0.shape[:-1] + (field.m,))
    if fixed.size:
        c[:, fixed] = fixed_slopes
        target = target - np.einsum('bij,bj->bi', b[:, :, fixed], fixed_slopes)
    c[:, free] = np.einsum('bji,bi->bj', np.linalg.pinv(b[:, :, free]), target)
    return c


def _check_singular(J, rows, norms, opts, fixed):
    """Raise on the first row whose free-coordinate block of Z is numerically singular"""
    dets = np.abs(np.linalg.det(J))
    scale = np.linalg.norm(J, 2, axis=(1, 2)) ** J.shape[-1]
    singular = ~(dets > opts.singular_rtol * scale)
    if np.any(singular):
        index = int(np.flatnonzero(singular)[0])
        first = int(rows[index])
        hint = (" Try a different free/fixed split of the driver coordinates."
                if fixed.size else " Check rank(b) = d and that y1 is reachable.")
        raise SingularJacobianError(
            f"Singular sensitivity on interval {first} (|det Z| = {dets[index]:.3e}).{hint}",
            interval=first, residual=float(norms[first]),
        )


def _newton_batch(y0, y1, delta, theta, field, opts, free, fixed, fixed_slopes, start=None):
    """
    Solve F_delta(y0_b, c_b) = y1_b for every row b simultaneously

    Returns slopes (B, m), slope-parametrized Z (B, d, m), iteration counts and
    residual norms. Iteration counts include the evaluation at the initial guess.
    """
    if start is None:
        c = _initial_guess(y0, y1, delta, theta, field, free, fixed, fixed_slopes)
    else:
        c = np.array(start, dtype=float).reshape(y0.shape[0], field.m)
        if fixed.size:
            c[:, fixed] = fixed_slopes
    result = flow(y0, c, theta, delta, field, steps=opts.steps)
    F, Z = result.terminal_state, result.sensitivity
    G = F - y1
    norms = np.linalg.norm(G, axis=1)
    tol = opts.tol_rel * (1.0 + np.linalg.norm(y1, axis=1))
    iters = np.ones(y0.shape[0], dtype=int)

    for iteration in range(opts.max_iter + 1):
        active = np.flatnonzero(norms > tol)
        if active.size == 0:
            break
        if iteration == opts.max_iter:
            first = int(active[0])
            raise NonConvergenceError(
                f"Newton did not converge on interval {first} after {opts.max_iter} iterations "
                f"(residual {norms[first]:.3e} > tol {tol[first]:.3e})",
                interval=first, residual=float(norms[first]),
            )

        J = Z[active][:, :, free]
        _check_singular(J, active, norms, opts, fixed)

        step = -np.linalg.solve(J, G[active][:, :, None])[:, :, 0]
        pending = np.arange(active.size)
        factor = np.ones(active.size)

        for halving in range(opts.max_halvings + 1):
            rows = active[pending]
            trial = c[rows].copy()
            trial[:, free] += factor[pending, None] * step[pending]
            res = flow(y0[rows], trial, theta, delta[rows], field, steps=opts.steps)
            trial_G = res.terminal_state - y1[rows]
            trial_norms = np.linalg.norm(trial_G, axis=1)

            accept = trial_norms < norms[rows]
            if halving == opts.max_halvings:
                accept[:] = True

            taken = rows[accept]
            c[taken] = trial[accept]
            Z[taken] = res.sensitivity[accept]
            G[taken] = trial_G[accept]
            norms[taken] = trial_norms[accept]

            pending = pending[~accept]
            if pending.size == 0:
                break
            factor[pending] *= 0.5

        if halving:
            logger.debug(f"Newton iteration {iteration + 1}: line search used up to {halving} halvings")
        iters[active] += 1

    # rows accepted at the initial guess never passed the in-loop check
    _check_singular(Z[:, :, free], np.arange(y0.shape[0]), norms, opts, fixed)
    return c, Z, iters, norms


def _as_rows(value, dim):
    return np.atleast_1d(np.asarray(value, dtype=float)).reshape(1, dim)


def solve_increment(y0, y1, delta: float, theta: Theta, field: ParametricVectorField,
                    opts: Optional[NewtonOptions] = None,
                    initial_slope=None) -> IncrementSolution:
    """
    Solve F_delta(y0, c; theta) = y1 for the slope c in the square case m = d

    Args:
        y0, y1: Consecutive observations in R^d
        delta: Interval length
        theta: Parameter mapping
        field: Vector field with m = d
        opts: Newton settings
        initial_slope: Newton starting slope (default: linearization at y0)

    Returns:
        IncrementSolution with slope, raw increment slope * delta, both
        parametrizations of Z and the iteration count
    """
    if field.m != field.d:
        raise ValueError(f"solve_increment needs m = d, got m={field.m}, d={field.d}; "
                         f"use solve_increment_constrained")
    return _solve_single(y0, y1, delta, theta, field, opts, None, None, initial_slope)


def solve_increment_constrained(y0, y1, delta: float, theta: Theta, field: ParametricVectorField,
                                fixed, free_coords: Optional[Sequence[int]] = None,
                                opts: Optional[NewtonOptions] = None) -> IncrementSolution:
    """
    Solve for the free slope coordinates with the remaining m - d frozen

    fixed holds the slopes of the non-free coordinates in increasing index
    order; by default the first d coordinates are free.
    """
    if field.m <= field.d:
        raise ValueError("solve_increment_constrained needs m > d")
    return _solve_single(y0, y1, delta, theta, field, opts, fixed, free_coords)


def _solve_single(y0, y1, delta, theta, field, opts, fixed_values, free_coords, initial_slope=None):
    opts = opts or NewtonOptions()
    field.check_theta(theta)
    free, fixed = _free_split(field, free_coords)
    fixed_slopes = None
    if fixed.size:
        fixed_slopes = np.atleast_1d(np.asarray(fixed_values, dtype=float)).reshape(1, fixed.size)

    c, Z, iters, norms = _newton_batch(
        _as_rows(y0, field.d), _as_rows(y1, field.d), np.array([float(delta)]),
        theta, field, opts, free, fixed, fixed_slopes, start=initial_slope,
    )
    return IncrementSolution(
        slope=c[0], increment=c[0] * delta,
        z_slope=Z[0], z_increment=Z[0] / delta,
        iterations=int(iters[0]), residual=float(norms[0]),
    )


def invert_dataset(obs: ObservationSet, theta: Theta, field: ParametricVectorField,
                   opts: Optional[NewtonOptions] = None,
                   fixed_increments=None,
                   free_coords: Optional[Sequence[int]] = None) -> InversionResult:
    """
    Invert every interval of a dataset

    Args:
        obs: Observations on a partition
        theta: Parameter mapping
        field: Vector field
        opts: Newton settings
        fixed_increments: Raw increments (N, m - d) of the frozen driver
            coordinates; required when m > d
        free_coords: Free driver coordinates when m > d (default: first d)

    Returns:
        InversionResult with raw increments and the per-interval |det Z|
        of the raw-increment map
    """
    opts = opts or NewtonOptions()
    field.check_theta(theta)
    if not field.invertible:
        raise ConfigError(f"Field '{field.name}' is declared non-invertible; its Ito map cannot be inverted")
    if obs.dim != field.d:
        raise GridError(f"Observations have dimension {obs.dim}, field state dimension is {field.d}")

    free, fixed = _free_split(field, free_coords)
    spacings = obs.partition.spacings
    fixed_slopes = None
    if fixed.size:
        if fixed_increments is None:
            raise ConfigError(f"Field '{field.name}' has m > d; supply increments of the fixed coordinates {[int(i) for i in fixed]}")
        fixed_raw = np.asarray(fixed_increments, dtype=float).reshape(obs.N, fixed.size)
        fixed_slopes = fixed_raw / spacings[:, None]

    y = obs.y_values
    c, Z, iters, norms = _newton_batch(y[:-1], y[1:], spacings, theta, field, opts, free, fixed, fixed_slopes)

    # |det| of the raw-increment Jacobian: slope-Z scaled by 1/delta per free coordinate
    z_dets = np.abs(np.linalg.det(Z[:, :, free])) / spacings ** field.d

    logger.debug(f"Inverted {obs.N} intervals of '{field.name}': max iterations {iters.max()}, "
                 f"max residual {norms.max():.2e}")
    return InversionResult(
        increments=IncrementSet.from_slopes(obs.partition, c),
        z_dets=z_dets,
        newton_iters=iters,
        residuals=norms,
        free_coords=tuple(int(i) for i in free),
    )


def jacobian_log_det(result: InversionResult) -> float:
    """log |D I^{-1}| = -sum_i log |det Z_i| (block lower triangular Jacobian)"""
    z_dets = np.asarray(result.z_dets, dtype=float)
    if np.any(~(z_dets > 0)):
        first = int(np.flatnonzero(~(z_dets > 0))[0])
        raise SingularJacobianError(f"Non-positive sensitivity determinant on interval {first}",
                                    interval=first)
    return float(-np.sum(np.log(z_dets)))
