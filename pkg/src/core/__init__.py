"""
Core module for the congestion toolkit.

This module provides the shared infrastructure: errors, configuration,
timing and the command line application.
"""

__all__ = [
    'application',
    'config',
    'errors',
    'solve_clock',
]
