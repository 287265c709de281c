"""
Discretization package.

This package provides the box grid and the fields defined on it.
"""

from src.discretization.grid import (
    Grid, ScalarField, FluxField, SourceMeasure,
    divergence, gradient, divergence_residual,
)

__all__ = [
    'Grid',
    'ScalarField',
    'FluxField',
    'SourceMeasure',
    'divergence',
    'gradient',
    'divergence_residual',
]
