"""
RoughLik Models
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Parametric vector fields used by the harness, and the registry that maps a
model id from an experiment config to a field factory.
"""

from functools import wraps
import logging

import numpy as np

from roughlik.utils.flow_engine import ParametricVectorField

logger = logging.getLogger(__name__)

FIELD_REGISTRY = {}


def register_field(field_id):
    """Register a field factory under a model id"""
    def decorator(factory):
        if field_id in FIELD_REGISTRY:
            raise ValueError(f"Model id '{field_id}' is already registered")

        @wraps(factory)
        def wrapper(**kwargs):
            return factory(**kwargs)

        FIELD_REGISTRY[field_id] = wrapper
        return wrapper
    return decorator


def get_field(field_id, **kwargs):
    """Build the field registered under field_id"""
    try:
        factory = FIELD_REGISTRY[field_id]
    except KeyError:
        known = ', '.join(sorted(FIELD_REGISTRY))
        raise ValueError(f"Unknown model id '{field_id}' (registered: {known})") from None
    return factory(**kwargs)


def _positive(*names):
    def validate(theta):
        for name in names:
            if not theta[name] > 0:
                raise ValueError(f"Parameter '{name}' must be positive, got {theta[name]}")
    return validate


def _batch_shape(y):
    return np.shape(y)[:-1]


@register_field('fou')
def fractional_ou():
    """dY = -lam Y dt + sigma dX with a scalar driver"""
    return ParametricVectorField(
        name='fou', d=1, m=1,
        a=lambda y, th: -th['lam'] * y,
        b=lambda y, th: np.full(_batch_shape(y) + (1, 1), float(th['sigma'])),
        grad_a=lambda y, th: np.full(_batch_shape(y) + (1, 1), -float(th['lam'])),
        grad_b=lambda y, th: np.zeros(_batch_shape(y) + (1, 1, 1)),
        param_names=('lam', 'sigma'),
        validate_theta=_positive('lam', 'sigma'),
    )


@register_field('pure_integrator')
def pure_integrator(dim=1):
    """dY = sigma dX with a, grad a, grad b identically zero"""
    eye = np.eye(dim)
    return ParametricVectorField(
        name='pure_integrator', d=dim, m=dim,
        a=lambda y, th: np.zeros_like(y),
        b=lambda y, th: np.broadcast_to(th['sigma'] * eye, _batch_shape(y) + (dim, dim)),
        grad_a=lambda y, th: np.zeros(_batch_shape(y) + (dim, dim)),
        grad_b=lambda y, th: np.zeros(_batch_shape(y) + (dim, dim, dim)),
        param_names=('sigma',),
        validate_theta=_positive('sigma'),
    )


def _nonlinear_b(y, th):
    y1 = y[..., 0]
    out = np.zeros(_batch_shape(y) + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0 + y1 ** 2 / (1.0 + y1 ** 2)
    return out


def _nonlinear_grad_b(y, th):
    y1 = y[..., 0]
    out = np.zeros(_batch_shape(y) + (2, 2, 2))
    out[..., 1, 1, 0] = 2.0 * y1 / (1.0 + y1 ** 2) ** 2
    return out


@register_field('nonlinear2d')
def nonlinear_rotation():
    """Rotation drift omega (-y2, y1) with state-dependent diagonal diffusion"""
    rotation = np.array([[0.0, -1.0], [1.0, 0.0]])
    return ParametricVectorField(
        name='nonlinear2d', d=2, m=2,
        a=lambda y, th: th['omega'] * np.stack([-y[..., 1], y[..., 0]], axis=-1),
        b=_nonlinear_b,
        grad_a=lambda y, th: np.broadcast_to(th['omega'] * rotation, _batch_shape(y) + (2, 2)),
        grad_b=_nonlinear_grad_b,
        param_names=('omega',),
    )


@register_field('diagonal_ou')
def diagonal_ou():
    """Two uncoupled OU coordinates, each driven by its own driver coordinate"""
    def drift(y, th):
        return -np.array([th['lam1'], th['lam2']]) * y

    def diffusion(y, th):
        return np.broadcast_to(np.diag([th['sigma1'], th['sigma2']]), _batch_shape(y) + (2, 2))

    return ParametricVectorField(
        name='diagonal_ou', d=2, m=2,
        a=drift, b=diffusion,
        grad_a=lambda y, th: np.broadcast_to(-np.diag([th['lam1'], th['lam2']]), _batch_shape(y) + (2, 2)),
        grad_b=lambda y, th: np.zeros(_batch_shape(y) + (2, 2, 2)),
        param_names=('lam1', 'lam2', 'sigma1', 'sigma2'),
        validate_theta=_positive('lam1', 'lam2', 'sigma1', 'sigma2'),
    )


@register_field('decoupled_driver')
def decoupled_driver():
    """Scalar OU with a second driver coordinate that has no effect"""
    return ParametricVectorField(
        name='decoupled_driver', d=1, m=2,
        a=lambda y, th: -th['lam'] * y,
        b=lambda y, th: np.broadcast_to(np.array([[th['sigma'], 0.0]]), _batch_shape(y) + (1, 2)),
        grad_a=lambda y, th: np.full(_batch_shape(y) + (1, 1), -float(th['lam'])),
        grad_b=lambda y, th: np.zeros(_batch_shape(y) + (1, 2, 1)),
        param_names=('lam', 'sigma'),
        validate_theta=_positive('lam', 'sigma'),
    )


@register_field('coupled_linear')
def coupled_linear():
    """Scalar OU driven by a two-dimensional driver through (sigma1, sigma2)"""
    return ParametricVectorField(
        name='coupled_linear', d=1, m=2,
        a=lambda y, th: -th['lam'] * y,
        b=lambda y, th: np.broadcast_to(np.array([[th['sigma1'], th['sigma2']]]), _batch_shape(y) + (1, 2)),
        grad_a=lambda y, th: np.full(_batch_shape(y) + (1, 1), -float(th['lam'])),
        grad_b=lambda y, th: np.zeros(_batch_shape(y) + (1, 2, 1)),
        param_names=('lam', 'sigma1', 'sigma2'),
        validate_theta=_positive('lam', 'sigma1'),
    )
