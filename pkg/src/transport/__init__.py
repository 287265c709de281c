"""
Transport package.

This package contains the congestion costs, the Beckmann primal-dual solver
and the path (Wardrop) formulation.
"""

from src.transport.cost import CostKind, CostModel, GrowthReport
from src.transport.beckmann import (
    Problem, SolveReport, NormReport,
    solve, solve_dual, recover_flux, project_feasible, duality_gap,
    sobolev_dual_norm, sobolev_norms,
)
from src.transport.lagrangian import (
    Path, PathMeasure, IntensityPair,
    is_acyclic, cancel_cycles, decompose, traffic_intensity,
    wardrop_energy, equilibrium_check,
)

__all__ = [
    'CostKind',
    'CostModel',
    'GrowthReport',
    'Problem',
    'SolveReport',
    'NormReport',
    'solve',
    'solve_dual',
    'recover_flux',
    'project_feasible',
    'duality_gap',
    'sobolev_dual_norm',
    'sobolev_norms',
    'Path',
    'PathMeasure',
    'IntensityPair',
    'is_acyclic',
    'cancel_cycles',
    'decompose',
    'traffic_intensity',
    'wardrop_energy',
    'equilibrium_check',
]
