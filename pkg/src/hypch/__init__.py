"""Layer dynamics for the one-dimensional hyperbolic Cahn-Hilliard equation.

Modules:

* ``potential``: double-well potentials and their well constants;
* ``profile``: standing waves, the layered states ``u^h`` and their mass;
* ``layer_ode``: reduced ODEs for the layer positions;
* ``pde``: a finite-difference solver for the full equation;
* ``harness``, ``config``, ``cli``: reproduction runs and the command line.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    DomainError,
    EventAtStart,
    HypchError,
    NoLayers,
    NoRoot,
    NoSolution,
    QuadratureFailure,
    SolveFailure,
    StepFailure,
    ToleranceFailure,
    ValidationFailure,
)
from .potential import DoubleWellPotential, make_potential, polynomial_potential, quartic_potential
from .profile import Field, LayerVector, ProfileParams, alpha_beta, build_uh, mass, solve_hN1, solve_phi
from .layer_ode import OdeParams, compare_tau_limit, initial_velocities, integrate
from .pde import PdeParams, PdeState, diagnostics, extract_layers, integrate_pde, step

__all__ = [
    "DomainError", "EventAtStart", "HypchError", "NoLayers", "NoRoot", "NoSolution",
    "QuadratureFailure", "SolveFailure", "StepFailure", "ToleranceFailure", "ValidationFailure",
    "DoubleWellPotential", "make_potential", "polynomial_potential", "quartic_potential",
    "Field", "LayerVector", "ProfileParams", "alpha_beta", "build_uh", "mass", "solve_hN1", "solve_phi",
    "OdeParams", "compare_tau_limit", "initial_velocities", "integrate",
    "PdeParams", "PdeState", "diagnostics", "extract_layers", "integrate_pde", "step",
]
