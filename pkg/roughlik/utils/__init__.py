"""
RoughLik Utilities Package
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Shared exception hierarchy and numerical retry helpers
"""

from functools import wraps
import logging

import numpy as np
from scipy.linalg import LinAlgError

logger = logging.getLogger(__name__)


class RoughLikError(Exception):
    """Base class for every error raised by RoughLik"""
    pass


class GridError(RoughLikError, ValueError):
    """Raised for invalid partitions, non-nested grids or mismatched paths"""
    pass


class CovarianceError(RoughLikError):
    """Raised when a covariance matrix cannot be factorized"""
    pass


class FlowError(RoughLikError):
    """Raised when the interval ODE produces a non-finite state"""

    def __init__(self, message, substep=None):
        super().__init__(message)
        self.substep = substep


class InversionError(RoughLikError):
    """Raised when the Ito map cannot be inverted on an interval"""

    def __init__(self, message, interval=None, residual=None):
        super().__init__(message)
        self.interval = interval
        self.residual = residual


class NonConvergenceError(InversionError):
    """Newton iteration hit its iteration limit"""
    pass


class SingularJacobianError(InversionError):
    """Sensitivity matrix Z became singular during the Newton iteration"""
    pass


class LikelihoodError(RoughLikError):
    """Raised when a likelihood cannot be assembled"""
    pass


class ScaleFitError(RoughLikError):
    """Raised when the multi-level scale regression is ill-posed"""
    pass


class EstimationError(RoughLikError):
    """Raised by the staged estimators"""
    pass


class UnestimableParameterError(EstimationError):
    """A coordinate is not sensitive to any scale component (infinite order)"""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class PosteriorUnderflowError(EstimationError):
    """All posterior mass vanished at some stage"""
    pass


class ConfigError(RoughLikError, ValueError):
    """Raised for invalid experiment configuration"""
    pass


class DataFormatError(RoughLikError, ValueError):
    """Raised for malformed CSV input; carries the offending line number"""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def retry_with_jitter(max_retries=1, relative_jitter=1e-12):
    """
    Decorator to retry a matrix factorization after adding diagonal jitter

    The wrapped function takes a symmetric matrix as its first argument. On
    LinAlgError the diagonal is lifted by relative_jitter * trace / n and the
    call is retried, at most max_retries times.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(matrix, *args, **kwargs):
            retries = 0
            current = np.asarray(matrix, dtype=float)

            while True:
                try:
                    return func(current, *args, **kwargs)
                except (LinAlgError, ValueError) as e:
                    if retries >= max_retries:
                        logger.error(f"Factorization failed after {retries} jitter retries: {e}")
                        raise CovarianceError(
                            f"Matrix is not positive definite (after {retries} jitter retries): {e}"
                        ) from e

                    n = current.shape[0]
                    jitter = relative_jitter * np.trace(current) / n
                    retries += 1
                    logger.warning(
                        f"Factorization failed, adding diagonal jitter {jitter:.3e} "
                        f"(attempt {retries}/{max_retries}): {e}"
                    )
                    current = current + jitter * np.eye(n)
        return wrapper
    return decorator
