"""
RoughLik Grid Paths
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Partitions of [0, T], piecewise-linear paths on them, raw increments,
dyadic refinement/coarsening and the p-variation distance
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union
import logging

import numpy as np

from roughlik.utils import GridError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Partition:
    """Strictly increasing grid 0 = t_0 < ... < t_N = T"""
    times: np.ndarray
    level: Optional[int] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise GridError("A partition needs at least two grid times")
        if times[0] != 0.0:
            raise GridError(f"Partition must start at 0, got {times[0]}")
        if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
            raise GridError("Partition times must be finite and strictly increasing")
        object.__setattr__(self, 'times', _frozen(times))

    @classmethod
    def uniform(cls, delta: float, n_intervals: int, level: Optional[int] = None) -> 'Partition':
        """Homogeneous grid with N intervals of width delta"""
        if delta <= 0 or n_intervals < 1:
            raise GridError(f"Uniform grid needs delta > 0 and N >= 1 (got {delta}, {n_intervals})")
        return cls(np.arange(n_intervals + 1) * float(delta), level=level)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_intervals(self) -> int:
        return self.times.size - 1

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def mesh(self) -> float:
        return float(self.spacings.max())

    @property
    def is_homogeneous(self) -> bool:
        # arange(N+1)*delta is only exact for dyadic delta
        spacings = self.spacings
        return bool(np.allclose(spacings, spacings[0], rtol=1e-12, atol=0.0))

    def same_as(self, other: 'Partition') -> bool:
        """Exact grid equality (grids are constructed, never measured)"""
        return self.times.shape == other.times.shape and bool(np.all(self.times == other.times))

    def contains(self, other: 'Partition') -> bool:
        """True when every time of other is a time of this partition"""
        idx = np.searchsorted(self.times, other.times)
        if np.any(idx >= self.times.size):
            return False
        return bool(np.all(self.times[idx] == other.times))

    def __len__(self):
        return self.times.size

    def __repr__(self):
        level = f", level={self.level}" if self.level is not None else ""
        return f"Partition(N={self.n_intervals}, T={self.T:g}, mesh={self.mesh:g}{level})"


@dataclass(frozen=True, eq=False)
class PiecewiseLinearPath:
    """Values of an R^m path at grid times; the path is their linear interpolant"""
    partition: Partition
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != len(self.partition):
            raise GridError(
                f"Path needs one value per grid time: {len(self.partition)} times, "
                f"values shape {np.shape(self.values)}"
            )
        object.__setattr__(self, 'values', _frozen(values))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, t: Union[float, ArrayLike]) -> np.ndarray:
        """Evaluate the linear interpolant at time(s) t"""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.partition.T):
            raise GridError(f"Evaluation times must lie in [0, {self.partition.T}]")
        out = np.column_stack([
            np.interp(t, self.partition.times, self.values[:, j]) for j in range(self.dim)
        ])
        return out


@dataclass(frozen=True, eq=False)
class IncrementSet:
    """Raw increments dx_i = x_{t_{i+1}} - x_{t_i} of a path on a partition"""
    partition: Partition
    raw_increments: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw_increments, dtype=float)
        if raw.ndim == 1:
            raw = raw[:, None]
        if raw.ndim != 2 or raw.shape[0] != self.partition.n_intervals:
            raise GridError(
                f"Expected {self.partition.n_intervals} increments, got shape {np.shape(self.raw_increments)}"
            )
        object.__setattr__(self, 'raw_increments', _frozen(raw))

    @property
    def dim(self) -> int:
        return self.raw_increments.shape[1]

    def slopes(self) -> np.ndarray:
        """Normalised increments dx_i / (t_{i+1} - t_i)"""
        return self.raw_increments / self.partition.spacings[:, None]

    @classmethod
    def from_slopes(cls, partition: Partition, slopes: ArrayLike) -> 'IncrementSet':
        slopes = np.asarray(slopes, dtype=float)
        if slopes.ndim == 1:
            slopes = slopes[:, None]
        return cls(partition, slopes * partition.spacings[:, None])

    def cumulate(self, x0: Optional[ArrayLike] = None) -> PiecewiseLinearPath:
        """Rebuild the path from its starting point"""
        x0 = np.zeros(self.dim) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
        values = np.vstack([x0, x0 + np.cumsum(self.raw_increments, axis=0)])
        return PiecewiseLinearPath(self.partition, values)


def dyadic_grid(n: int, T: float) -> Partition:
    """
    Dyadic partition D(n) of [0, T] with spacing 2^-n

    Args:
        n: Dyadic level (non-negative)
        T: Time horizon; 2^n * T must be a positive integer

    Returns:
        Partition with N = 2^n T equal intervals
    """
    if int(n) != n or n < 0:
        raise GridError(f"Dyadic level must be a non-negative integer, got {n}")
    n = int(n)
    if T <= 0:
        raise GridError(f"Time horizon must be positive, got {T}")

    n_intervals = T * 2 ** n
    if n_intervals != int(n_intervals):
        raise GridError(
            f"2^{n} * T = {n_intervals} is not an integer; choose an integral T "
            f"or a level at which the grid closes exactly at T"
        )

    return Partition(np.arange(int(n_intervals) + 1) / 2.0 ** n, level=n)


def restrict(path: PiecewiseLinearPath, coarser: Partition) -> PiecewiseLinearPath:
    """Sample a path at the times of a nested coarser partition"""
    fine = path.partition
    if coarser.T != fine.T or not fine.contains(coarser):
        raise GridError(f"{coarser!r} is not nested in {fine!r}")
    idx = np.searchsorted(fine.times, coarser.times)
    return PiecewiseLinearPath(coarser, path.values[idx])


def refine(path: PiecewiseLinearPath, finer: Partition) -> PiecewiseLinearPath:
    """Represent a path on a superset grid (the interpolant is unchanged)"""
    if finer.T != path.partition.T or not finer.contains(path.partition):
        raise GridError(f"{finer!r} does not refine {path.partition!r}")
    return PiecewiseLinearPath(finer, path.at(finer.times))


def common_refinement(a: PiecewiseLinearPath, b: PiecewiseLinearPath):
    """Put two paths on the union of their grids"""
    if a.partition.T != b.partition.T:
        raise GridError("Paths must share the time horizon")
    if a.partition.same_as(b.partition):
        return a, b
    union = Partition(np.union1d(a.partition.times, b.partition.times))
    return refine(a, union), refine(b, union)


def increments(path: PiecewiseLinearPath) -> IncrementSet:
    """Raw increments of a path, one per interval"""
    return IncrementSet(path.partition, np.diff(path.values, axis=0))


def p_variation_distance(a: PiecewiseLinearPath, b: PiecewiseLinearPath, p: float) -> float:
    """
    Level-1 p-variation norm of the difference path a - b

    For piecewise-linear paths the supremum over partitions is attained on a
    subset of the common grid; it is computed exactly by dynamic programming
    over grid points, O(K^2) for K grid points.
    """
    if p < 1:
        raise GridError(f"p-variation needs p >= 1, got {p}")
    if not a.partition.same_as(b.partition):
        raise GridError("Paths must live on a common grid; call common_refinement first")
    if a.dim != b.dim:
        raise GridError(f"Dimension mismatch: {a.dim} vs {b.dim}")

    diff = a.values - b.values
    best = np.zeros(diff.shape[0])
    for j in range(1, diff.shape[0]):
        jumps = np.linalg.norm(diff[j] - diff[:j], axis=1) ** p
        best[j] = np.max(best[:j] + jumps)

    return float(best[-1] ** (1.0 / p))
