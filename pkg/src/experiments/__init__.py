"""
Experiments package for the congestion toolkit.

Contains the dipole constructions and sweeps that test membership of
point measures in the negative Sobolev space.
"""
from src.experiments.dipoles import (
    CloudReport,
    CloudSweep,
    Dipole,
    ScalingResult,
    ScalingRow,
    cloud_sweep,
    cones_disjoint,
    critical_exponent,
    dipole_cloud,
    dipole_source,
    is_subcritical,
    place_dipole_cloud,
    sample_Vab,
    scaling_experiment,
    scaling_exponent,
    weak_divergence_error,
)

__all__ = [
    'CloudReport',
    'CloudSweep',
    'Dipole',
    'ScalingResult',
    'ScalingRow',
    'cloud_sweep',
    'cones_disjoint',
    'critical_exponent',
    'dipole_cloud',
    'dipole_source',
    'is_subcritical',
    'place_dipole_cloud',
    'sample_Vab',
    'scaling_experiment',
    'scaling_exponent',
    'weak_divergence_error',
]
