"""Exception types shared across the package."""

from __future__ import annotations


class HypchError(Exception):
    """Base class for every error raised by this package."""


class ValidationFailure(HypchError):
    """A potential (or a configuration) violates the double-well assumptions."""


class QuadratureFailure(HypchError):
    """A quadrature did not reach the requested tolerance."""


class NoSolution(HypchError):
    """The standing-wave boundary value problem has no solution for this length."""


class DomainError(HypchError):
    """A layer configuration lies outside the admissible set Omega_rho."""


class NoRoot(HypchError):
    """Mass matching could not bracket a root inside Omega_rho."""


class StepFailure(HypchError):
    """The ODE integrator could not advance (step size underflow or similar)."""


class EventAtStart(HypchError):
    """The initial layer state already violates the minimal-gap constraint."""


class SolveFailure(HypchError):
    """The banded linear solve in the PDE stepper failed."""


class NoLayers(HypchError):
    """A field has no sign change, so no transition layer can be extracted."""


class ToleranceFailure(HypchError):
    """A reproduced table entry falls outside its tolerance band."""

    def __init__(self, message: str, failures: list | None = None, report=None):
        super().__init__(message)
        self.failures = failures or []
        self.report = report
