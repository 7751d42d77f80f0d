"""
RoughLik - Exact and Scale-Separated Likelihoods for Rough Differential Equations
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

# roughlik/version.py
"""Version information for RoughLik by Calmic Sdn Bhd"""

__version__ = "1.0.0"
__build__ = "2025.11.03"
__author__ = "Calmic Sdn Bhd"
__company__ = "Calmic Sdn Bhd"
__description__ = "Likelihood-based inference for equations driven by piecewise-linear and rough paths"

# Version history
VERSION_HISTORY = {
    "1.0.0": {
        "date": "2025-11-03",
        "changes": [
            "Itô-map inversion with RK4 sensitivity and batched Newton",
            "fBm increment model with dense Cholesky factorization",
            "Exact and Monte-Carlo marginal log-likelihoods",
            "Scale decomposition, hierarchical MLE and staged posterior",
            "Closed-form fOU reference oracle",
            "Experiment harness with dyadic convergence study"
        ]
    }
}


def get_version():
    """Get the current version string"""
    return __version__


def get_version_info():
    """Get detailed version information, echoed into result JSON"""
    return {
        "version": __version__,
        "build": __build__,
        "author": __author__,
        "description": __description__,
    }


def get_full_version():
    """Get full version string with build info"""
    return f"RoughLik v{__version__} (Build {__build__}) - {__company__}"
