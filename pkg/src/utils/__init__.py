"""
Utilities package for the congestion toolkit.

This package contains the PNG renderer for two-dimensional solutions.
"""

from .field_renderer import (
    flux_surface, potential_surface, render_solution, save_surface
)

__all__ = [
    'flux_surface',
    'potential_surface',
    'render_solution',
    'save_surface',
]
