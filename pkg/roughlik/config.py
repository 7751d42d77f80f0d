"""
RoughLik Configuration
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

import os
import logging
import sys

from decouple import config as env


class Config:
    """Base configuration class"""
    # Flow integration
    RK4_SUBSTEPS = env('ROUGHLIK_RK4_SUBSTEPS', default=16, cast=int)
    FD_GRADIENT_STEP = env('ROUGHLIK_FD_GRADIENT_STEP', default=1e-6, cast=float)

    # Newton inversion of the Ito map
    NEWTON_TOL_REL = env('ROUGHLIK_NEWTON_TOL_REL', default=1e-10, cast=float)
    NEWTON_MAX_ITER = env('ROUGHLIK_NEWTON_MAX_ITER', default=50, cast=int)
    LINE_SEARCH_MAX_HALVINGS = env('ROUGHLIK_LINE_SEARCH_MAX_HALVINGS', default=20, cast=int)
    SINGULAR_DET_RTOL = 1e-14

    # Noise model
    CHOLESKY_JITTER = env('ROUGHLIK_CHOLESKY_JITTER', default=1e-12, cast=float)
    CHOLESKY_MAX_RETRIES = 1

    # Case II marginal likelihood
    MC_SAMPLES = env('ROUGHLIK_MC_SAMPLES', default=256, cast=int)
    MC_FAILURE_WARN_FRACTION = 0.5

    # Estimators
    ORDER_GRADIENT_RTOL = 1e-8
    GOLDEN_XTOL_FRACTION = 1e-6
    POSTERIOR_TV_THRESHOLD = 1e-6

    # Convergence study
    PVAR_P = env('ROUGHLIK_PVAR_P', default=2.5, cast=float)
    REFERENCE_LEVEL_MARGIN = 4

    # Execution
    MAX_WORKERS = env('ROUGHLIK_MAX_WORKERS', default=4, cast=int)
    OUTPUT_DIR = env('ROUGHLIK_OUTPUT_DIR', default=os.path.join(os.getcwd(), 'results'))
    LOG_LEVEL = env('ROUGHLIK_LOG_LEVEL', default='INFO')
    LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'

    @classmethod
    def init_app(cls, stream=None):
        """Install the stream handler on the package logger"""
        package_logger = logging.getLogger('roughlik')

        if not any(getattr(h, '_roughlik_handler', False) for h in package_logger.handlers):
            stream_handler = logging.StreamHandler(stream or sys.stderr)
            stream_handler.setFormatter(logging.Formatter(cls.LOG_FORMAT))
            stream_handler._roughlik_handler = True
            package_logger.addHandler(stream_handler)

        package_logger.setLevel(getattr(logging, str(cls.LOG_LEVEL).upper(), logging.INFO))
        package_logger.debug(f"RoughLik configured with {cls.__name__}")


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    LOG_LEVEL = env('ROUGHLIK_LOG_LEVEL', default='DEBUG')


class ProductionConfig(Config):
    """Production configuration - batch experiment runs"""
    DEBUG = False
    MAX_WORKERS = env('ROUGHLIK_MAX_WORKERS', default=os.cpu_count() or 4, cast=int)

    @classmethod
    def init_app(cls, stream=None):
        # Batch runs log to stdout so the scheduler captures them with results
        super().init_app(stream or sys.stdout)
        logging.getLogger('roughlik').info('RoughLik startup')


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    LOG_LEVEL = 'WARNING'
    MAX_WORKERS = 1
    MC_SAMPLES = 128


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_active_config():
    """Config class selected by ROUGHLIK_CONFIG (defaults to development)"""
    config_name = env('ROUGHLIK_CONFIG', default='') or 'default'
    return config.get(config_name, DevelopmentConfig)
