"""
RoughLik Flow Engine
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Fixed-step RK4 solution of the constant-slope interval ODE
    dy/dt = a(y; theta) + b(y; theta) c,
jointly with its sensitivity Z = D_c y, and the response of the equation to a
piecewise-linear driver.
"""

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence
import logging

import numpy as np

from roughlik.config import Config
from roughlik.utils import FlowError
from roughlik.utils.grid_path import PiecewiseLinearPath, increments

logger = logging.getLogger(__name__)

Theta = Mapping[str, float]


class ParametricVectorField:
    """
    Drift a(y; theta) in R^d and diffusion b(y; theta) in R^{d x m}

    All callables take a state array of shape (..., d) and broadcast over the
    leading axes. Gradients follow the index convention
    grad_a[..., i, j] = d a_i / d y_j and grad_b[..., i, beta, j] = d b_{i beta} / d y_j.
    When gradients are not supplied, central finite differences are used and
    exact_gradients is False.
    """

    def __init__(self, name: str, d: int, m: int,
                 a: Callable, b: Callable,
                 grad_a: Optional[Callable] = None,
                 grad_b: Optional[Callable] = None,
                 param_names: Sequence[str] = (),
                 invertible: bool = True,
                 validate_theta: Optional[Callable[[Theta], None]] = None,
                 fd_step: float = Config.FD_GRADIENT_STEP):
        if d < 1 or m < 1:
            raise ValueError(f"Field dimensions must be positive, got d={d}, m={m}")
        if d > m:
            raise ValueError(f"Driver dimension m={m} is smaller than state dimension d={d}; not supported")

        self.name = name
        self.d = d
        self.m = m
        self.param_names = tuple(param_names)
        self.invertible = invertible
        self._a = a
        self._b = b
        self._grad_a = grad_a
        self._grad_b = grad_b
        self._validate_theta = validate_theta
        self.fd_step = fd_step
        self.exact_gradients = grad_a is not None and grad_b is not None

        if not self.exact_gradients:
            logger.warning(f"Field '{name}' has no analytic gradients; using central finite differences "
                           f"(step {fd_step:g}, lower accuracy)")

    def check_theta(self, theta: Theta):
        missing = [p for p in self.param_names if p not in theta]
        if missing:
            raise ValueError(f"Field '{self.name}' is missing parameters: {', '.join(missing)}")
        if self._validate_theta is not None:
            self._validate_theta(theta)

    def a(self, y, theta: Theta) -> np.ndarray:
        return np.asarray(self._a(np.asarray(y, dtype=float), theta), dtype=float)

    def b(self, y, theta: Theta) -> np.ndarray:
        return np.asarray(self._b(np.asarray(y, dtype=float), theta), dtype=float)

    def grad_a(self, y, theta: Theta) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self._grad_a is not None:
            return np.asarray(self._grad_a(y, theta), dtype=float)
        return self._central_difference(self.a, y, theta)

    def grad_b(self, y, theta: Theta) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self._grad_b is not None:
            return np.asarray(self._grad_b(y, theta), dtype=float)
        return self._central_difference(self.b, y, theta)

    def _central_difference(self, func, y, theta):
        columns = []
        for j in range(self.d):
            step = np.zeros(self.d)
            step[j] = self.fd_step
            columns.append((func(y + step, theta) - func(y - step, theta)) / (2.0 * self.fd_step))
        return np.stack(columns, axis=-1)

    def __repr__(self):
        return f"ParametricVectorField('{self.name}', d={self.d}, m={self.m})"


def finite_difference_field(field: ParametricVectorField, step: float = Config.FD_GRADIENT_STEP) -> ParametricVectorField:
    """Copy of a field that ignores its analytic gradients"""
    return ParametricVectorField(
        name=f"{field.name}[fd]", d=field.d, m=field.m,
        a=field._a, b=field._b,
        param_names=field.param_names, invertible=field.invertible,
        validate_theta=field._validate_theta, fd_step=step,
    )


@dataclass(frozen=True, eq=False)
class FlowResult:
    """Terminal state F_t(y0, c; theta) and slope-parametrized sensitivity Z_t(c)"""
    terminal_state: np.ndarray
    sensitivity: Optional[np.ndarray]
    dense_states: Optional[np.ndarray] = None

    def increment_sensitivity(self, t: float) -> np.ndarray:
        """Z with respect to the raw increment c*t, i.e. slope-Z / t"""
        t = np.asarray(t, dtype=float)
        return self.sensitivity / (t[..., None, None] if t.ndim else t)


def _vector_field(field, theta, y, Z, c):
    a = field.a(y, theta)
    b = field.b(y, theta)
    ydot = a + np.einsum('...ib,...b->...i', b, c)
    if Z is None:
        return ydot, None
    A = field.grad_a(y, theta) + np.einsum('...ibj,...b->...ij', field.grad_b(y, theta), c)
    Zdot = A @ Z + b
    return ydot, Zdot


def _integrate(y0, c, theta, t, field, steps, with_sensitivity=True, keep_dense=False):
    y = np.array(y0, dtype=float)
    Z = np.zeros(y.shape + (field.m,)) if with_sensitivity else None
    dense = [y.copy()] if keep_dense else None

    # per-row step sizes broadcast against (..., d) states and (..., d, m) sensitivities
    h = np.asarray(t, dtype=float) / steps
    hy = h[..., None] if h.ndim else h
    hz = hy[..., None] if h.ndim else h

    for k in range(steps):
        k1y, k1z = _vector_field(field, theta, y, Z, c)
        if with_sensitivity:
            k2y, k2z = _vector_field(field, theta, y + 0.5 * hy * k1y, Z + 0.5 * hz * k1z, c)
            k3y, k3z = _vector_field(field, theta, y + 0.5 * hy * k2y, Z + 0.5 * hz * k2z, c)
            k4y, k4z = _vector_field(field, theta, y + hy * k3y, Z + hz * k3z, c)
            Z = Z + (hz / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        else:
            k2y, _ = _vector_field(field, theta, y + 0.5 * hy * k1y, None, c)
            k3y, _ = _vector_field(field, theta, y + 0.5 * hy * k2y, None, c)
            k4y, _ = _vector_field(field, theta, y + hy * k3y, None, c)
        y = y + (hy / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)

        if not np.all(np.isfinite(y)) or (with_sensitivity and not np.all(np.isfinite(Z))):
            raise FlowError(f"Non-finite state in field '{field.name}' at substep {k + 1}/{steps}",
                            substep=k + 1)
        if keep_dense:
            dense.append(y.copy())

    return y, Z, (np.stack(dense) if keep_dense else None)


def flow(y0, c, theta: Theta, t: float, field: ParametricVectorField,
         steps: int = Config.RK4_SUBSTEPS, keep_dense: bool = False,
         with_sensitivity: bool = True) -> FlowResult:
    """
    Integrate the state and its sensitivity over [0, t] with fixed-step RK4

    Args:
        y0: Initial state, shape (d,) or batched (B, d)
        c: Normalised slope of the driver, shape (m,) or (B, m)
        theta: Parameter mapping
        t: Interval length (> 0); an array of shape (B,) for batched rows
        field: The parametric vector field
        steps: Number of RK4 substeps
        keep_dense: Also return the states at every substep

    Returns:
        FlowResult with terminal state and Z_t (shape (..., d, m), Z_0 = 0)
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if np.any(np.asarray(t) <= 0):
        raise ValueError(f"Integration time must be positive, got {t}")

    y0 = np.asarray(y0, dtype=float)
    c = np.asarray(c, dtype=float)
    if y0.shape[-1] != field.d or c.shape[-1] != field.m:
        raise ValueError(f"Expected state dim {field.d} and slope dim {field.m}, "
                         f"got {y0.shape[-1]} and {c.shape[-1]}")

    y, Z, dense = _integrate(y0, c, theta, t, field, steps,
                             with_sensitivity=with_sensitivity, keep_dense=keep_dense)
    return FlowResult(terminal_state=y, sensitivity=Z, dense_states=dense)


def respond(y0, driver: PiecewiseLinearPath, theta: Theta, field: ParametricVectorField,
            steps_per_interval: int = Config.RK4_SUBSTEPS) -> PiecewiseLinearPath:
    """
    Response of the equation to a piecewise-linear driver, sampled on its grid

    Each interval is driven by the slope dx_i / (t_{i+1} - t_i); the grid
    values completely determine the response path together with the flow.
    """
    if driver.dim != field.m:
        raise ValueError(f"Driver dimension {driver.dim} does not match field driver dimension {field.m}")
    field.check_theta(theta)

    incs = increments(driver)
    slopes = incs.slopes()
    spacings = driver.partition.spacings

    y = np.atleast_1d(np.asarray(y0, dtype=float))
    values = np.empty((len(driver.partition), field.d))
    values[0] = y
    for i in range(driver.partition.n_intervals):
        y = flow(y, slopes[i], theta, spacings[i], field,
                 steps=steps_per_interval, with_sensitivity=False).terminal_state
        values[i + 1] = y

    logger.debug(f"Response of '{field.name}' computed on {driver.partition!r}")
    return PiecewiseLinearPath(driver.partition, values)
