"""
RoughLik Fractional Brownian Noise Model
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Covariance of fBm increments on a homogeneous grid, seeded sampling and the
Gaussian log-density of an increment vector. Dense Cholesky throughout: cost
is O(N^3) in the interval count, fine for desk-scale grids (N <= ~4096).
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union
import logging

import numpy as np
from scipy.linalg import cholesky, solve_triangular, toeplitz

from roughlik.config import Config
from roughlik.utils import GridError, retry_with_jitter
from roughlik.utils.grid_path import IncrementSet, Partition

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _check_hurst(h: float):
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst parameter must lie in the open interval (0, 1), got {h}")


def increment_autocovariance(h: float, n: int) -> np.ndarray:
    """Unit-spacing autocovariance of fBm increments at lags 0..n-1"""
    _check_hurst(h)
    k = np.arange(n, dtype=float)
    two_h = 2.0 * h
    return 0.5 * (np.abs(k + 1.0) ** two_h + np.abs(k - 1.0) ** two_h - 2.0 * k ** two_h)


@retry_with_jitter(max_retries=Config.CHOLESKY_MAX_RETRIES, relative_jitter=Config.CHOLESKY_JITTER)
def _lower_cholesky(matrix: np.ndarray) -> np.ndarray:
    return cholesky(matrix, lower=True, check_finite=True)


@dataclass(frozen=True, eq=False)
class CovFactor:
    """Dense covariance with its lower Cholesky factor and log-determinant"""
    matrix: np.ndarray
    chol: np.ndarray
    log_det: float
    h: float
    delta: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """L^{-1} x, column-wise for a (N, m) array"""
        return solve_triangular(self.chol, x, lower=True, check_finite=False)

    def quadratic_form(self, x: np.ndarray) -> np.ndarray:
        """x^T Sigma^{-1} x per column, via one triangular solve"""
        w = self.whiten(np.asarray(x, dtype=float))
        return np.sum(w * w, axis=0)


def covariance(h: float, delta: float, n: int) -> CovFactor:
    """
    Covariance of N consecutive fBm increments on a grid of spacing delta

    Args:
        h: Hurst parameter in (0, 1)
        delta: Grid spacing (> 0)
        n: Number of increments (>= 1)

    Returns:
        CovFactor with the Toeplitz matrix, its Cholesky factor and log|Sigma|
    """
    _check_hurst(h)
    if delta <= 0:
        raise ValueError(f"Grid spacing must be positive, got {delta}")
    if int(n) != n or n < 1:
        raise ValueError(f"Interval count must be a positive integer, got {n}")
    n = int(n)

    # Sigma(delta) = delta^{2h} Sigma(1) entrywise
    matrix = float(delta) ** (2.0 * h) * toeplitz(increment_autocovariance(h, n))
    chol = _lower_cholesky(matrix)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))

    logger.debug(f"fBm covariance factorized: h={h}, delta={delta}, N={n}, log|Sigma|={log_det:.6f}")
    return CovFactor(matrix=matrix, chol=chol, log_det=log_det, h=float(h), delta=float(delta))


def sample(model: CovFactor, seed: int, dim: int = 1,
           partition: Optional[Partition] = None) -> IncrementSet:
    """
    Draw fBm increments chol @ z with z from a seeded generator

    Coordinates of a multi-dimensional driver are independent, each with the
    same covariance.
    """
    partition = partition or Partition.uniform(model.delta, model.n)
    if partition.n_intervals != model.n:
        raise ValueError(f"Partition has {partition.n_intervals} intervals, covariance has {model.n}")

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((model.n, dim))
    return IncrementSet(partition, model.chol @ z)


def log_density(x: Union[IncrementSet, np.ndarray], model: CovFactor) -> float:
    """
    Gaussian log-density of an increment vector, summed over independent coordinates

    Each coordinate contributes -N/2 log(2 pi) - 1/2 log|Sigma| - 1/2 x^T Sigma^{-1} x.
    """
    raw = x.raw_increments if isinstance(x, IncrementSet) else np.asarray(x, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.shape[0] != model.n:
        raise ValueError(f"Increment vector has {raw.shape[0]} entries, covariance expects {model.n}")

    quad = model.quadratic_form(raw)
    per_coordinate = -0.5 * model.n * LOG_2PI - 0.5 * model.log_det - 0.5 * quad
    return float(np.sum(per_coordinate))


class FbmIncrementModel:
    """Increment law of an fBm driver on a homogeneous partition"""

    def __init__(self, h: float, partition: Partition):
        _check_hurst(h)
        if not partition.is_homogeneous:
            raise GridError("fBm increment model needs a homogeneous partition")
        self.h = float(h)
        self.partition = partition

    @property
    def N(self) -> int:
        return self.partition.n_intervals

    @cached_property
    def factor(self) -> CovFactor:
        return covariance(self.h, self.partition.spacings[0], self.N)

    def sample(self, seed: int, dim: int = 1) -> IncrementSet:
        return sample(self.factor, seed, dim=dim, partition=self.partition)

    def log_density(self, x: Union[IncrementSet, np.ndarray]) -> float:
        return log_density(x, self.factor)

    def __repr__(self):
        return f"FbmIncrementModel(h={self.h}, N={self.N}, delta={self.partition.spacings[0]:g})"
