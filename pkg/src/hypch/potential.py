"""Double-well potentials and their well constants.

A potential is an immutable bundle of closed-form evaluators ``F, F1, F2, F3``
(the function and its first three derivatives) together with the constants
that govern the exponentially small layer interactions:

* ``A_plus, A_minus`` with ``A**2 = F''(+-1)``;
* ``K_plus, K_minus`` defined by
  ``K = 2 exp( int_0^1 [ A / sqrt(2 F(+-t)) - 1/(1 - t) ] dt )``.

Polynomial wells additionally carry their Taylor coefficients about each well,
which lets the profile solver evaluate ``F(+-(1 - d))`` and differences of it
without cancellation when ``d`` is tiny.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import IntegrationWarning, quad

from .errors import QuadratureFailure, ValidationFailure

Evaluator = Callable[[np.ndarray | float], np.ndarray | float]

__all__ = [
    "DoubleWellPotential",
    "compute_well_constants",
    "make_potential",
    "polynomial_potential",
    "quartic_potential",
    "validate_double_well",
]

_WELL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DoubleWellPotential:
    F: Evaluator
    F1: Evaluator
    F2: Evaluator
    F3: Evaluator
    A_plus: float
    A_minus: float
    K_plus: float
    K_minus: float
    is_even: bool = False
    # Taylor coefficients of d -> F(s (1 - d)) for s = +1, -1 (ascending powers).
    well_coeffs: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    name: str = "custom"

    @property
    def A(self) -> float:
        """``sqrt(min F''(+-1))``, the rate in the uniform exponential bounds."""
        return min(self.A_plus, self.A_minus)

    def well(self, sign: int) -> tuple[float, float]:
        """Return ``(A, K)`` for the well at ``sign`` (+1 or -1)."""
        return (self.A_plus, self.K_plus) if sign > 0 else (self.A_minus, self.K_minus)

    def near_well(self, sign: int, d):
        """Evaluate ``F(sign * (1 - d))`` accurately for small ``d``."""
        d = np.asarray(d, dtype=float)
        if self.well_coeffs is not None:
            c = self.well_coeffs[0 if sign > 0 else 1]
            return np.polynomial.polynomial.polyval(d, c)
        return self.F(sign * (1.0 - d))

    def near_well_slope(self, sign: int, d):
        """``d/dd F(sign * (1 - d))``, accurate for small ``d``."""
        d = np.asarray(d, dtype=float)
        if self.well_coeffs is not None:
            c = self.well_coeffs[0 if sign > 0 else 1]
            return np.polynomial.polynomial.polyval(d, np.polynomial.polynomial.polyder(c))
        return -sign * self.F1(sign * (1.0 - d))

    def drop(self, sign: int, d, b, d_minus_b):
        """``F(s(1-d)) - F(s(1-b))`` with ``d - b`` supplied separately.

        This is the potential difference driving the standing-wave quadrature;
        near the turning point ``d - b`` is tiny and a naive subtraction loses
        every significant digit.
        """
        d = np.asarray(d, dtype=float)
        b = np.asarray(b, dtype=float)
        dmb = np.asarray(d_minus_b, dtype=float)
        if self.well_coeffs is not None:
            c = self.well_coeffs[0 if sign > 0 else 1]
            # sum_k c_k (d^k - b^k) = (d - b) sum_k c_k sum_{i<k} d^i b^(k-1-i)
            s_k = np.ones_like(d)
            b_pow = np.ones_like(d) * 1.0
            acc = np.zeros_like(d)
            for k in range(1, len(c)):
                acc = acc + c[k] * s_k
                b_pow = b_pow * b
                s_k = d * s_k + b_pow
            return dmb * acc
        m = sign * (1.0 - b)
        direct = self.F(sign * (1.0 - d)) - self.F(m)
        dphi = -sign * dmb
        taylor = self.F1(m) * dphi + 0.5 * self.F2(m) * dphi**2 + self.F3(m) * dphi**3 / 6.0
        cutoff = np.cbrt(1e-12 * np.maximum(b, 1e-300))
        return np.where(np.abs(dmb) < cutoff, taylor, direct)


def validate_double_well(F: Evaluator, F1: Evaluator, F2: Evaluator) -> None:
    """Check the double-well assumptions on a 10^4-point grid over [-2, 2]."""
    for s in (1.0, -1.0):
        if abs(F(s)) > _WELL_TOL or abs(F1(s)) > _WELL_TOL:
            raise ValidationFailure(f"F or F' does not vanish at u={s:+.0f}")
        if not F2(s) > 0:
            raise ValidationFailure(f"F''({s:+.0f}) must be positive, got {F2(s)}")
    u = np.linspace(-2.0, 2.0, 10_001)
    values = np.asarray(F(u), dtype=float)
    away = (np.abs(u - 1.0) > _WELL_TOL) & (np.abs(u + 1.0) > _WELL_TOL)
    if np.any(values < -_WELL_TOL) or np.any(values[away] <= 0):
        bad = u[away][values[away] <= 0]
        raise ValidationFailure(f"F must be positive away from the wells; fails near u={bad[:3]}")


def _k_integral(G: Callable[[float], float], A: float, cap: float, tol: float) -> float:
    def integrand(s: float) -> float:
        return A / math.sqrt(2.0 * G(s)) - 1.0 / s

    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = quad(integrand, cap, 1.0, epsabs=0.0, epsrel=tol, limit=400)
        except IntegrationWarning as exc:
            raise QuadratureFailure(f"K integral did not converge: {exc}") from exc
    return value


def compute_well_constants(
    F: Evaluator,
    F1: Evaluator,
    F2: Evaluator,
    F3: Evaluator | None = None,
    *,
    near_well: Callable[[int, float], float] | None = None,
    tol: float = 1e-12,
    validate: bool = True,
) -> tuple[float, float, float, float]:
    """Return ``(A_plus, A_minus, K_plus, K_minus)`` for a double well.

    The K integrand is bounded although both of its terms blow up at ``t = 1``.
    We integrate in ``s = 1 - t`` over ``[cap, 1]`` and remove the missing
    sliver by Richardson extrapolation in ``cap`` (the integrand tends to a
    finite limit, so the truncation error is linear in ``cap``).
    """
    if validate:
        validate_double_well(F, F1, F2)
    A_plus = math.sqrt(float(F2(1.0)))
    A_minus = math.sqrt(float(F2(-1.0)))
    # without exact well expansions the integrand is noisy near s=0
    cap = 1e-8 if near_well is not None else 1e-5
    Ks = []
    for sign, A in ((1, A_plus), (-1, A_minus)):
        if near_well is not None:
            G = lambda s, sign=sign: float(near_well(sign, s))  # noqa: E731
        else:
            G = lambda s, sign=sign: float(F(sign * (1.0 - s)))  # noqa: E731
        coarse = _k_integral(G, A, cap, tol)
        fine = _k_integral(G, A, cap / 2.0, tol)
        Ks.append(2.0 * math.exp(2.0 * fine - coarse))
    return A_plus, A_minus, Ks[0], Ks[1]


def make_potential(
    F: Evaluator,
    F1: Evaluator,
    F2: Evaluator,
    F3: Evaluator,
    *,
    is_even: bool = False,
    well_coeffs: tuple[np.ndarray, np.ndarray] | None = None,
    name: str = "custom",
) -> DoubleWellPotential:
    """Validate an evaluator bundle and attach its well constants."""
    near = None
    if well_coeffs is not None:
        near = lambda s, d: np.polynomial.polynomial.polyval(d, well_coeffs[0 if s > 0 else 1])  # noqa: E731
    A_p, A_m, K_p, K_m = compute_well_constants(F, F1, F2, F3, near_well=near)
    return DoubleWellPotential(
        F=F, F1=F1, F2=F2, F3=F3,
        A_plus=A_p, A_minus=A_m, K_plus=K_p, K_minus=K_m,
        is_even=is_even, well_coeffs=well_coeffs, name=name,
    )


def polynomial_potential(coeffs: Sequence[float], *, name: str = "custom") -> DoubleWellPotential:
    """Build a potential from polynomial coefficients in ascending powers of u."""
    P = Polynomial(np.asarray(coeffs, dtype=float))
    dP = [P.deriv(k) for k in range(1, 4)]
    expansions = []
    for s in (1.0, -1.0):
        c = np.pad(P(Polynomial([s, -s])).coef, (0, 1))[: P.degree() + 1]
        if abs(c[0]) > _WELL_TOL or abs(c[1]) > _WELL_TOL:
            raise ValidationFailure(f"F or F' does not vanish at u={s:+.0f}")
        # the well conditions hold exactly; drop the round-off so that tiny
        # distances from the well keep full relative accuracy
        c[:2] = 0.0
        expansions.append(c)
    odd = P.coef[1::2]
    return make_potential(
        P, dP[0], dP[1], dP[2],
        is_even=bool(np.all(np.abs(odd) == 0.0)),
        well_coeffs=(expansions[0], expansions[1]),
        name=name,
    )


def quartic_potential() -> DoubleWellPotential:
    """``F(u) = (u^2 - 1)^2 / 4``, with ``A = sqrt(2)`` and ``K = 4`` at both wells."""
    return polynomial_potential([0.25, 0.0, -0.5, 0.0, 0.25], name="quartic")
