"""Weak stability boundary laboratory for the planar circular restricted three-body problem."""

from .dynamics import (
    OsculatingElements,
    PolarState,
    RotatingState,
    SystemParams,
    cartesian_from_polar,
    effective_potential,
    elements_from_state,
    hamiltonian,
    polar_from_cartesian,
    state_from_wsb_coords,
    vector_field,
)
from .equilibria import L1Spectrum, LagrangePointSet, l1_spectrum, lagrange_points, quintic_root

__version__ = "0.1.0"

__all__ = [
    "L1Spectrum",
    "LagrangePointSet",
    "OsculatingElements",
    "PolarState",
    "RotatingState",
    "SystemParams",
    "cartesian_from_polar",
    "effective_potential",
    "elements_from_state",
    "hamiltonian",
    "l1_spectrum",
    "lagrange_points",
    "polar_from_cartesian",
    "quintic_root",
    "state_from_wsb_coords",
    "vector_field",
    "__version__",
]
