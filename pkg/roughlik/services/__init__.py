"""
RoughLik Services Package
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Contains the likelihood, estimation and experiment pipelines
"""
# roughlik/services/__init__.py
