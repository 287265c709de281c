"""
Formats package.

This package reads and writes the problem, solution and paths documents
and the dipole sweep table.
"""

__all__ = [
    'files',
]
