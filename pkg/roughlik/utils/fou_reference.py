"""
RoughLik fOU Reference
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Closed forms for the scalar fractional Ornstein-Uhlenbeck equation
    dY = -lam Y dt + sigma dX
driven by a piecewise-linear fBm on a homogeneous grid: forward and inverse
interval maps, sensitivity, full log-likelihood, the h = 1/2 scale components
and the analytic estimators. Used as the oracle for the generic pipeline.
"""

from dataclasses import dataclass
from typing import Tuple
import logging

import numpy as np

from roughlik.utils import EstimationError
from roughlik.utils.fbm_model import LOG_2PI, covariance, log_density
from roughlik.utils.grid_path import IncrementSet, Partition
from roughlik.utils.inverse_ito import ObservationSet

logger = logging.getLogger(__name__)

# below this lam*delta the ratio x / (1 - e^-x) switches to its Taylor expansion
SERIES_THRESHOLD = 1e-6


def expm_ratio(x):
    """x / (1 - e^{-x}), smooth through x = 0"""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    exact = safe / -np.expm1(-safe)
    series = 1.0 + x / 2.0 + x * x / 12.0
    out = np.where(small, series, exact)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FouParams:
    """Parameters of the fOU testbed on a homogeneous grid"""
    lam: float
    sigma: float
    delta: float
    N: int
    h: float = 0.5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not 0.0 < self.h < 1.0:
            raise ValueError(f"Hurst parameter must lie in (0, 1), got {self.h}")

    @classmethod
    def on_grid(cls, lam: float, sigma: float, partition: Partition, h: float = 0.5) -> 'FouParams':
        if not partition.is_homogeneous:
            raise ValueError("fOU closed forms need a homogeneous partition")
        return cls(lam=lam, sigma=sigma, delta=float(partition.spacings[0]),
                   N=partition.n_intervals, h=h)

    @property
    def T(self) -> float:
        return self.N * self.delta

    @property
    def theta(self) -> dict:
        return {'lam': self.lam, 'sigma': self.sigma}

    @property
    def decay(self) -> float:
        return float(np.exp(-self.lam * self.delta))


def _values(y: ObservationSet, params: FouParams) -> np.ndarray:
    if y.dim != 1:
        raise ValueError(f"fOU observations are scalar, got dimension {y.dim}")
    if y.N != params.N:
        raise ValueError(f"Observations have {y.N} intervals, parameters expect {params.N}")
    return y.y_values[:, 0]


def fou_invert(y: ObservationSet, params: FouParams) -> IncrementSet:
    """
    Driver increments from observations:
    dx_{k+1} = lam delta (y_{k+1} - y_k e^{-lam delta}) / (sigma (1 - e^{-lam delta}))
    """
    values = _values(y, params)
    lagged = values[1:] - values[:-1] * params.decay
    raw = expm_ratio(params.lam * params.delta) * lagged / params.sigma
    return IncrementSet(y.partition, raw)


def fou_forward(x: IncrementSet, y0: float, params: FouParams) -> ObservationSet:
    """Observations generated by driver increments; inverse of fou_invert"""
    if x.dim != 1 or x.partition.n_intervals != params.N:
        raise ValueError("fOU driver must be scalar with one increment per interval")
    gain = params.sigma / expm_ratio(params.lam * params.delta)
    raw = x.raw_increments[:, 0]

    values = np.empty(params.N + 1)
    values[0] = y0
    for k in range(params.N):
        values[k + 1] = values[k] * params.decay + gain * raw[k]
    return ObservationSet(x.partition, values)


def fou_sensitivity(params: FouParams, t: float) -> float:
    """Increment-parametrized Z_t = sigma (1 - e^{-lam t}) / (lam delta) for t in [0, delta]"""
    if t < 0 or t > params.delta * (1.0 + 1e-12):
        raise ValueError(f"t must lie in [0, {params.delta}], got {t}")
    return params.sigma * t / (params.delta * expm_ratio(params.lam * t))


def _jacobian_term(params: FouParams) -> float:
    # N log(lam delta / (sigma (1 - e^{-lam delta})))
    return params.N * float(np.log(expm_ratio(params.lam * params.delta) / params.sigma))


def fou_loglik(y: ObservationSet, params: FouParams) -> float:
    """
    Full log-likelihood for any h, constants included:
    log N(dx; 0, Sigma_h) + N log(lam delta / (sigma (1 - e^{-lam delta})))
    """
    increments = fou_invert(y, params)
    factor = covariance(params.h, params.delta, params.N)
    return log_density(increments, factor) + _jacobian_term(params)


def fou_loglik_diffusion(y: ObservationSet, params: FouParams) -> float:
    """h = 1/2 log-likelihood written out in the lagged differences y_{k+1} - y_k e^{-lam delta}"""
    values = _values(y, params)
    lagged = values[1:] - values[:-1] * params.decay
    ratio = expm_ratio(params.lam * params.delta)
    quad = ratio ** 2 * float(np.sum(lagged ** 2)) / (params.sigma ** 2 * params.delta)
    return (-0.5 * params.N * (LOG_2PI + np.log(params.delta)) - 0.5 * quad
            + _jacobian_term(params))


def _sums(values: np.ndarray, delta: float):
    dy = np.diff(values)
    y_left = values[:-1]
    return float(np.sum(dy ** 2)), float(np.sum(y_left ** 2) * delta), float(np.sum(y_left * dy))


def fou_scaled_components(y: ObservationSet, lam: float, sigma: float) -> Tuple[float, float]:
    """
    Normalised components of the h = 1/2 expansion
    loglik = N l0 + l1 - (N/2) log(delta) + O(1/N)

    Returns:
        (l0, l1); l0 depends on sigma only
    """
    if y.dim != 1:
        raise ValueError(f"fOU observations are scalar, got dimension {y.dim}")
    if not y.partition.is_homogeneous:
        raise ValueError("fOU closed forms need a homogeneous partition")
    values = y.y_values[:, 0]
    delta = float(y.partition.spacings[0])
    T = y.partition.T
    s2 = sigma ** 2

    qv, y2dt, ydy = _sums(values, delta)
    l0 = -0.5 * np.log(2.0 * np.pi * s2) - qv / (2.0 * T * s2)
    l1 = (lam * T / 2.0 - lam * qv / (2.0 * s2)) - (lam ** 2 * y2dt / (2.0 * s2) + lam * ydy / s2)
    return float(l0), float(l1)


def fou_expansion(y: ObservationSet, lam: float, sigma: float) -> float:
    """Two-term reconstruction N l0 + l1 plus the theta-free grid constant -(N/2) log(delta)"""
    l0, l1 = fou_scaled_components(y, lam, sigma)
    delta = float(y.partition.spacings[0])
    return y.N * l0 + l1 - 0.5 * y.N * float(np.log(delta))


def fou_mle(y: ObservationSet, delta: float = None, T: float = None) -> Tuple[float, float]:
    """
    Analytic estimators from the scale components

    Returns:
        (sigma2_hat, lam_hat) with sigma2_hat = sum(dy^2) / T and
        lam_hat = -sum(y_k dy_k) / sum(y_k^2 delta)
    """
    values = y.y_values[:, 0]
    delta = float(y.partition.spacings[0]) if delta is None else float(delta)
    T = y.partition.T if T is None else float(T)

    qv, y2dt, ydy = _sums(values, delta)
    sigma2_hat = qv / T
    if qv == 0.0 and ydy == 0.0:
        # zero increments: both statistics vanish
        return 0.0, 0.0
    if not y2dt > 0:
        raise EstimationError("lam_hat is undefined: sum of y_k^2 delta is zero")
    lam_hat = -ydy / y2dt
    logger.debug(f"fOU estimates: sigma2_hat={sigma2_hat:.6g}, lam_hat={lam_hat:.6g}")
    return float(sigma2_hat), float(lam_hat)
