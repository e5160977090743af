"""Finite-difference solver for the Hartree equation with Dirichlet forcing.

Solves ``i u_t = Lap u - f(u) u`` with ``f(u) = k * |u|^2`` on a box, with
``u = Q`` prescribed on the boundary, and evaluates the mass, energy and
virial balance laws on the computed trajectories.
"""

from .config import RunConfig, acceptance_template, format_config, parse_config, parse_text
from .diagnostics import (DiagnosticsRow, boundary_flux_J, energy, energy_identity_residual, mass,
                          mass_identity_residual, virial_identity_residual)
from .errors import BallEscape, CompatibilityError, ConfigError, GridMismatchError, PicardDivergence
from .grid import Grid, XiField, build_grid, build_xi_field
from .kernel import KernelSpec, apply_nonlinearity, hartree_potential
from .lifting import BoundaryData, harmonic_lift, make_boundary_data
from .stepper import contraction_probe, solve, step
from .study import refinement_study

__all__ = [
    "BallEscape", "BoundaryData", "CompatibilityError", "ConfigError", "DiagnosticsRow", "Grid",
    "GridMismatchError", "KernelSpec", "PicardDivergence", "RunConfig", "XiField",
    "acceptance_template", "apply_nonlinearity", "boundary_flux_J", "build_grid", "build_xi_field",
    "contraction_probe", "energy", "energy_identity_residual", "format_config", "harmonic_lift",
    "hartree_potential", "make_boundary_data", "mass", "mass_identity_residual", "parse_config",
    "parse_text", "refinement_study", "solve", "step", "virial_identity_residual",
]
