"""
Estimator Service for RoughLik
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Scale-ordered estimation on a finite parameter grid: order detection,
hierarchical maximum likelihood (stage k maximises the order-k component with
lower orders frozen) and staged posterior updating.
"""

from dataclasses import dataclass, field as dataclass_field
from functools import partial
from itertools import product
from typing import Dict, List, Mapping, Optional, Sequence
import logging

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from roughlik.config import get_active_config
from roughlik.extensions import parallel_map
from roughlik.services.likelihood_service import ScaledLogLik
from roughlik.utils import EstimationError, PosteriorUnderflowError, UnestimableParameterError
from roughlik.utils.inverse_ito import ObservationSet

logger = logging.getLogger(__name__)


class ParameterSpace:
    """Finite Cartesian grid over named coordinates with an optional order assignment"""

    def __init__(self, names: Sequence[str], grid: Mapping[str, Sequence[float]],
                 order_assignment: Optional[Mapping[str, int]] = None):
        self.names = tuple(names)
        if len(set(self.names)) != len(self.names) or not self.names:
            raise ValueError(f"Coordinate names must be unique and non-empty, got {self.names}")

        self.grid = {}
        for name in self.names:
            if name not in grid:
                raise ValueError(f"No grid given for coordinate '{name}'")
            values = np.asarray(grid[name], dtype=float)
            if values.ndim != 1 or values.size < 2 or np.any(np.diff(values) <= 0):
                raise ValueError(f"Grid for '{name}' must hold at least two increasing values")
            values.setflags(write=False)
            self.grid[name] = values

        self.order_assignment = None
        if order_assignment is not None:
            self.order_assignment = self._check_orders(order_assignment)

    def _check_orders(self, orders):
        orders = {name: int(k) for name, k in orders.items()}
        missing = [n for n in self.names if n not in orders]
        if missing:
            raise ValueError(f"Coordinates without a finite order: {', '.join(missing)}")
        if any(k < 0 for k in orders.values()):
            raise ValueError("Orders must be non-negative")
        return orders

    def with_orders(self, orders: Mapping[str, int]) -> 'ParameterSpace':
        return ParameterSpace(self.names, self.grid, orders)

    @property
    def shape(self):
        return tuple(self.grid[n].size for n in self.names)

    def midpoint(self, name: str) -> float:
        values = self.grid[name]
        return 0.5 * float(values[0] + values[-1])

    def spacing(self, name: str) -> float:
        return float(np.min(np.diff(self.grid[name])))

    def points(self) -> List[Dict[str, float]]:
        """All grid points in C order of the coordinate axes"""
        return [dict(zip(self.names, map(float, combo)))
                for combo in product(*(self.grid[n] for n in self.names))]

    def __repr__(self):
        dims = ' x '.join(f"{n}[{self.grid[n].size}]" for n in self.names)
        return f"ParameterSpace({dims})"


@dataclass(frozen=True)
class StageEstimate:
    """Estimate of one coordinate and how it was reached"""
    coordinate: str
    order: int
    estimate: float
    grid_argmax: float
    stage_argmax_on_boundary: bool

    def to_dict(self) -> dict:
        return {
            'coordinate': self.coordinate,
            'order': self.order,
            'estimate': self.estimate,
            'stage_argmax_on_boundary': self.stage_argmax_on_boundary,
        }


@dataclass
class HierarchicalEstimate:
    """theta_hat with per-order provenance"""
    estimates: Dict[str, float] = dataclass_field(default_factory=dict)
    records: List[StageEstimate] = dataclass_field(default_factory=list)

    @property
    def orders(self) -> Dict[str, int]:
        return {r.coordinate: r.order for r in self.records}

    @property
    def any_on_boundary(self) -> bool:
        return any(r.stage_argmax_on_boundary for r in self.records)

    def to_dict(self) -> list:
        return [r.to_dict() for r in self.records]


def _sensitive(component, coordinate, base, space, data, rtol) -> bool:
    values = []
    for value in space.grid[coordinate]:
        theta = dict(base)
        theta[coordinate] = float(value)
        values.append(component(data, theta))
    values = np.asarray(values)
    scale = max(1.0, float(np.max(np.abs(values))))
    return bool(np.max(np.abs(np.diff(values))) > rtol * scale)


def _stationary_point(negative, x, lo, hi, width):
    """Root of the central-difference slope bracketed around x, or x when none is"""
    step = float(np.cbrt(np.finfo(float).eps)) * max(1.0, abs(x))

    def slope(z):
        return (negative(z + step) - negative(z - step)) / (2.0 * step)

    a, b = max(lo, x - width), min(hi, x + width)
    if not a < b:
        return x
    try:
        if slope(a) * slope(b) > 0:
            return x
        return float(brentq(slope, a, b, xtol=1e-14))
    except (ValueError, RuntimeError):
        return x


def _refine(objective, coordinate, theta, space, xtol_fraction):
    values = space.grid[coordinate]
    idx = int(np.argmin(np.abs(values - theta[coordinate])))
    lo = values[max(idx - 1, 0)]
    hi = values[min(idx + 1, values.size - 1)]

    def negative(x):
        trial = dict(theta)
        trial[coordinate] = float(x)
        return -objective(trial)

    xatol = xtol_fraction * space.spacing(coordinate)
    result = minimize_scalar(negative, bounds=(lo, hi), method='bounded', options={'xatol': xatol})
    x, fun = float(result.x), float(result.fun)

    # bounded search stops at ~sqrt(eps) relative; polish on the slope root
    polished = _stationary_point(negative, x, lo, hi, 100.0 * xatol)
    if polished != x:
        polished_fun = negative(polished)
        if polished_fun <= fun + 64.0 * np.finfo(float).eps * max(1.0, abs(fun)):
            x, fun = polished, polished_fun

    # keep the grid point when refinement does not improve on it
    if fun <= negative(theta[coordinate]):
        return x
    return theta[coordinate]


def _maximise_stage(component, coords, base, space, data, xtol_fraction):
    axes = [space.grid[c] for c in coords]
    best_value, best_index = -np.inf, None
    for index in product(*(range(a.size) for a in axes)):
        theta = dict(base)
        theta.update({c: float(axes[j][i]) for j, (c, i) in enumerate(zip(coords, index))})
        value = component(data, theta)
        if value > best_value:
            best_value, best_index = value, index
    if best_index is None:
        raise EstimationError(f"Stage objective is not finite anywhere on the grid for {list(coords)}")

    theta = dict(base)
    theta.update({c: float(axes[j][i]) for j, (c, i) in enumerate(zip(coords, best_index))})
    grid_argmax = dict(theta)
    on_boundary = {c: i in (0, axes[j].size - 1) for j, (c, i) in enumerate(zip(coords, best_index))}

    # coordinate-wise golden-section/parabolic refinement inside the neighbouring grid cells
    objective = partial(component, data)
    for _ in range(1 if len(coords) == 1 else 20):
        previous = dict(theta)
        for c in coords:
            theta[c] = _refine(objective, c, theta, space, xtol_fraction)
        if all(abs(theta[c] - previous[c]) <= xtol_fraction * space.spacing(c) for c in coords):
            break
    return theta, grid_argmax, on_boundary


def _staged_search(components: ScaledLogLik, space: ParameterSpace, data: ObservationSet,
                   orders: Optional[Mapping[str, int]] = None):
    active = get_active_config()
    estimate = HierarchicalEstimate()
    remaining = list(space.names)

    for k in range(components.order_count):
        component = partial(_component_value, components, k)
        base = {n: estimate.estimates.get(n, space.midpoint(n)) for n in space.names}

        if orders is not None:
            stage_coords = [n for n in remaining if orders[n] == k]
        else:
            stage_coords = [n for n in remaining
                            if _sensitive(component, n, base, space, data, active.ORDER_GRADIENT_RTOL)]
        if not stage_coords:
            logger.debug(f"Stage {k}: no coordinates of this order")
            continue

        theta, grid_argmax, on_boundary = _maximise_stage(
            component, stage_coords, base, space, data, active.GOLDEN_XTOL_FRACTION)
        for c in stage_coords:
            if on_boundary[c]:
                logger.warning(f"Stage {k}: argmax of '{c}' lies on the grid boundary; widen the grid")
            estimate.estimates[c] = theta[c]
            estimate.records.append(StageEstimate(
                coordinate=c, order=k, estimate=theta[c],
                grid_argmax=grid_argmax[c], stage_argmax_on_boundary=on_boundary[c],
            ))
            remaining.remove(c)
        logger.info(f"Stage {k}: estimated {', '.join(f'{c}={theta[c]:.6g}' for c in stage_coords)}")

    if remaining:
        if orders is not None:
            bad = [n for n in remaining if orders[n] >= components.order_count]
            raise EstimationError(f"Orders {[orders[n] for n in bad]} exceed the available components")
        raise UnestimableParameterError(
            f"Coordinate '{remaining[0]}' is not sensitive to any component (infinite order)",
            coordinate=remaining[0],
        )
    return estimate


def _component_value(components, k, data, theta):
    return components.component(k, data, theta)


def detect_orders(components: ScaledLogLik, space: ParameterSpace, data: ObservationSet) -> Dict[str, int]:
    """
    Order of each coordinate: the first component with a non-vanishing gradient along it

    Coordinates found at earlier orders are frozen at their stage estimates;
    coordinates not yet estimated sit at the midpoint of their grid.
    """
    orders = _staged_search(components, space, data).orders
    logger.info(f"Detected orders: {orders}")
    return orders


def hierarchical_mle(components: ScaledLogLik, space: ParameterSpace, data: ObservationSet) -> HierarchicalEstimate:
    """
    Stage-wise maximum likelihood

    Stage k maximises l_k over the order-k coordinates with lower orders frozen
    at their estimates. Uses the space's order assignment when present and
    detects orders otherwise.
    """
    return _staged_search(components, space, data, orders=space.order_assignment)


@dataclass(frozen=True, eq=False)
class StagedPosterior:
    """Prior u_0 and the posteriors u_1..u_r on the grid, each summing to one"""
    names: tuple
    grid: Dict[str, np.ndarray]
    stage_densities: List[np.ndarray]

    @property
    def stages(self) -> int:
        return len(self.stage_densities)

    def marginal(self, stage: int, name: str) -> np.ndarray:
        axis = self.names.index(name)
        others = tuple(i for i in range(len(self.names)) if i != axis)
        return self.stage_densities[stage].sum(axis=others)

    def mode(self, stage: int = -1) -> Dict[str, float]:
        index = np.unravel_index(int(np.argmax(self.stage_densities[stage])), self.stage_densities[stage].shape)
        return {n: float(self.grid[n][i]) for n, i in zip(self.names, index)}

    def tv_distance(self, stage: int, name: str) -> float:
        """Total variation between the stage and previous-stage marginals of a coordinate"""
        return 0.5 * float(np.sum(np.abs(self.marginal(stage, name) - self.marginal(stage - 1, name))))

    def to_rows(self) -> List[List[float]]:
        """One row per grid point: coordinate values then the density at every stage"""
        flat = [u.ravel() for u in self.stage_densities]
        rows = []
        for j, combo in enumerate(product(*(self.grid[n] for n in self.names))):
            rows.append([float(v) for v in combo] + [float(u[j]) for u in flat])
        return rows

    def header(self) -> List[str]:
        return list(self.names) + [f"u{k}" for k in range(self.stages)]


def _grid_value(point, components, k, data):
    return components.scaled_component(k, data, point)


def staged_posterior(components: ScaledLogLik, space: ParameterSpace, prior: Optional[np.ndarray],
                     data: ObservationSet, max_workers: Optional[int] = None) -> StagedPosterior:
    """
    u_k proportional to u_{k-1} exp(l_k N^{-alpha_k}), renormalised at every stage

    Args:
        components: Scale components
        space: Parameter grid
        prior: Positive normalised density of shape space.shape (uniform if None)
        data: Observations

    Raises:
        PosteriorUnderflowError: a stage lost all its mass
    """
    shape = space.shape
    if prior is None:
        prior = np.full(shape, 1.0 / np.prod(shape))
    prior = np.asarray(prior, dtype=float).reshape(shape)
    if np.any(~(prior > 0)):
        raise ValueError("Prior must be positive at every grid point")
    if abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError(f"Prior must be normalised, sums to {prior.sum()}")

    points = space.points()
    stages = [prior]
    for k in range(components.order_count):
        scores = np.array(parallel_map(
            partial(_grid_value, components=components, k=k, data=data), points, max_workers,
        )).reshape(shape)
        if not np.any(np.isfinite(scores)):
            raise PosteriorUnderflowError(f"Stage {k + 1}: component {k} is not finite on the grid")

        weights = np.exp(scores - np.max(scores[np.isfinite(scores)]))
        weights[~np.isfinite(weights)] = 0.0
        updated = stages[-1] * weights
        total = updated.sum()
        if not total > 0:
            raise PosteriorUnderflowError(
                f"Stage {k + 1} posterior underflowed to zero; use a log-space prior "
                f"or a grid concentrated near the likelihood mass"
            )
        stages.append(updated / total)
        logger.debug(f"Posterior stage {k + 1} computed on {len(points)} grid points")

    return StagedPosterior(names=space.names, grid=dict(space.grid), stage_densities=stages)


def posterior_orders(posterior: StagedPosterior, threshold: Optional[float] = None) -> Dict[str, int]:
    """
    Order of each coordinate from the posterior sequence

    A coordinate has order k when stage k + 1 is the first update that moves
    its marginal by more than threshold in total variation.
    """
    threshold = get_active_config().POSTERIOR_TV_THRESHOLD if threshold is None else threshold
    orders = {}
    for name in posterior.names:
        for stage in range(1, posterior.stages):
            if posterior.tv_distance(stage, name) > threshold:
                orders[name] = stage - 1
                break
        else:
            raise UnestimableParameterError(
                f"Posterior of '{name}' never moves away from the prior", coordinate=name)
    return orders
