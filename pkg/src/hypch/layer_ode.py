"""Reduced ODEs for the motion of the transition layers.

Two systems are integrated for the positions ``h = (h_1, ..., h_{N+1})``:

* classic (tau = 0):      h' = P(h)
* hyperbolic (tau > 0):   h' = eta,  tau eta' = P(h) - eta - tau Q(h, eta)

``P`` and ``Q`` are "stacked" vectors built from per-gap terms
``P_i = (alpha^{i+2} - alpha^i) / (4 l_{i+1})`` and
``q_i = (eta_{i+1}^2 - eta_i^2) / (2 l_{i+1})``: the first entry is the first
term, interior entries add two neighbouring terms, the last entry is the last
term.  For two layers the quadratic term is absent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, EventAtStart, StepFailure, ValidationFailure
from .potential import DoubleWellPotential
from .profile import AlphaTable, LayerVector, ProfileParams, solve_hN1

__all__ = [
    "LayerState",
    "OdeParams",
    "TauLimitReport",
    "Trajectory",
    "P_of_h",
    "Q_of",
    "L_pm",
    "compare_tau_limit",
    "gap_alpha_vector",
    "initial_velocities",
    "integrate",
    "length_forcing",
    "rhs_classic",
    "rhs_hyperbolic",
    "stack",
]

_EXPLICIT = {"RK45", "RK23", "DOP853"}
_IMPLICIT = {"Radau", "BDF", "LSODA"}


@dataclass(frozen=True)
class OdeParams:
    eps: float
    tau: float
    rho: float
    delta: float | None = None
    rel_tol: float = 1e-10
    abs_tol: float = 1e-13
    t_end: float = 1.0
    method: str = "RK45"
    alpha_mode: str = "asymptotic"

    def __post_init__(self):
        if not self.eps > 0 or not self.rho > 0:
            raise ValidationFailure("eps and rho must be positive")
        if self.tau < 0:
            raise ValidationFailure(f"tau must be non-negative, got {self.tau}")
        if self.delta is not None and not self.delta < self.threshold:
            raise ValidationFailure(f"need delta < eps/rho, got delta={self.delta}")
        if self.method not in _EXPLICIT | _IMPLICIT:
            raise ValidationFailure(f"unknown integrator {self.method!r}")
        if self.alpha_mode not in ("asymptotic", "exact"):
            raise ValidationFailure(f"unknown alpha mode {self.alpha_mode!r}")
        if self.alpha_mode == "exact" and self.threshold < 5.0 * self.eps:
            raise ValidationFailure("exact alpha needs eps/rho >= 5 eps (rho <= 0.2)")
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.t_end > 0):
            raise ValidationFailure("tolerances and t_end must be positive")

    @property
    def threshold(self) -> float:
        """Collision threshold ``eps / rho`` on every gap."""
        return self.eps / self.rho


@dataclass(frozen=True, eq=False)
class LayerState:
    h: LayerVector
    eta: np.ndarray
    t: float = 0.0


# ---------------------------------------------------------------------------
# interaction coefficients


_TABLES: dict[tuple[int, int], AlphaTable] = {}


def _gap_signs(n_gaps: int) -> np.ndarray:
    # gap j (1-based) sits near the well (-1)**j
    return np.where(np.arange(1, n_gaps + 1) % 2 == 0, 1, -1)


def gap_alpha_vector(gaps: np.ndarray, eps: float, pot: DoubleWellPotential,
                     mode: str = "asymptotic") -> np.ndarray:
    """``alpha^j`` for every gap, using the branch of the phase on that gap.

    The asymptotic form ``K^2 A^2 exp(-A l / eps) / 2`` is evaluated for any
    gap length (for the quartic it is ``16 exp(-sqrt(2) l / eps)``); the
    reduced equations are only meaningful while gaps stay well above eps.
    """
    signs = _gap_signs(gaps.size)
    out = np.empty_like(gaps)
    for s in (1, -1):
        sel = signs == s
        if mode == "asymptotic":
            A, K = pot.well(s)
            out[sel] = 0.5 * K * K * A * A * np.exp(-A * gaps[sel] / eps)
        else:
            key = (id(pot), s)
            if key not in _TABLES:
                _TABLES[key] = AlphaTable(pot, s)
            out[sel] = _TABLES[key](gaps[sel] / eps)
    return out


def stack(terms: np.ndarray) -> np.ndarray:
    """``(t_1, t_1 + t_2, ..., t_{N-1} + t_N, t_N)`` from N per-gap terms."""
    out = np.zeros(terms.size + 1)
    out[:-1] += terms
    out[1:] += terms
    return out


def _p_terms(h: np.ndarray, eps: float, pot, mode: str) -> tuple[np.ndarray, np.ndarray]:
    ext = np.concatenate(([-h[0]], h, [2.0 - h[-1]]))
    gaps = np.diff(ext)
    alpha = gap_alpha_vector(gaps, eps, pot, mode)
    # P_i = (alpha^{i+2} - alpha^i) / (4 l_{i+1}), i = 1..N
    return (alpha[2:] - alpha[:-2]) / (4.0 * gaps[1:-1]), gaps


def _check_h(h: np.ndarray, params: OdeParams) -> None:
    gaps = np.diff(np.concatenate(([-h[0]], h, [2.0 - h[-1]])))
    if np.any(gaps <= params.threshold):
        raise DomainError(f"state leaves Omega_rho: min gap {gaps.min():.6g} <= {params.threshold:.6g}")


def P_of_h(h: LayerVector | np.ndarray, params: OdeParams, pot: DoubleWellPotential) -> np.ndarray:
    """Velocity field of the classic system, stacked over the N+1 layers."""
    h = h.h if isinstance(h, LayerVector) else np.asarray(h, dtype=float)
    _check_h(h, params)
    terms, _ = _p_terms(h, params.eps, pot, params.alpha_mode)
    return stack(terms)


def Q_of(h: LayerVector | np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Stacked quadratic coupling ``(eta_{k+1}^2 - eta_k^2) / (2 (h_{k+1} - h_k))``."""
    h = h.h if isinstance(h, LayerVector) else np.asarray(h, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if h.size < 3:
        raise ValueError("the quadratic coupling is only defined for three or more layers")
    l = np.diff(h)
    if np.any(l <= 0):
        raise DomainError("coincident or unordered layers")
    return stack((eta[1:] ** 2 - eta[:-1] ** 2) / (2.0 * l))


def rhs_classic(h: LayerVector | np.ndarray, params: OdeParams, pot: DoubleWellPotential) -> np.ndarray:
    return P_of_h(h, params, pot)


def rhs_hyperbolic(state: LayerState, params: OdeParams, pot: DoubleWellPotential
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(h', eta')`` for the hyperbolic system."""
    if not params.tau > 0:
        raise ValidationFailure("the hyperbolic system needs tau > 0")
    h = state.h.h if isinstance(state.h, LayerVector) else np.asarray(state.h, dtype=float)
    eta = np.asarray(state.eta, dtype=float)
    force = P_of_h(h, params, pot) - eta
    if h.size > 2:
        force = force - params.tau * Q_of(h, eta)
    return eta.copy(), force / params.tau


def length_forcing(h: np.ndarray, eta: np.ndarray, params: OdeParams, pot: DoubleWellPotential
                   ) -> np.ndarray:
    """Right-hand sides of ``tau l_j'' + l_j' = ...`` for the N+2 gap lengths.

    Written out term by term from the interval-length equations (not by
    differencing the stacked vectors) so that it can cross-check them.
    """
    h = np.asarray(h, dtype=float)
    eta = np.asarray(eta, dtype=float)
    N = h.size - 1
    P, gaps = _p_terms(h, params.eps, pot, params.alpha_mode)
    tau = params.tau
    if N == 1:
        return np.array([2.0 * P[0], 0.0, -2.0 * P[0]])

    def q(i: int) -> float:
        # Q(h'_{i+1}, h'_i) / (2 l_{i+1}) with 1-based i and l_{i+1} = h_{i+1} - h_i
        return (eta[i] ** 2 - eta[i - 1] ** 2) / (2.0 * gaps[i])

    out = np.empty(N + 2)
    out[0] = 2.0 * P[0] - 2.0 * tau * q(1)
    out[1] = P[1] - tau * q(2) if N >= 2 else 0.0
    for i in range(3, N + 1):
        out[i - 1] = P[i - 1] - P[i - 3] - tau * q(i) + tau * q(i - 2)
    out[N] = -P[N - 2] + tau * q(N - 1)
    out[N + 1] = -2.0 * P[N - 1] + 2.0 * tau * q(N)
    return out


def initial_velocities(h0: LayerVector | np.ndarray, mode: str, params: OdeParams,
                       pot: DoubleWellPotential) -> np.ndarray:
    """``eta(0) = +P(h0)`` (forward) or ``-P(h0)`` (reversed)."""
    v = rhs_classic(h0, params, pot)
    if mode == "forward":
        return v
    if mode == "reversed":
        return -v
    raise ValueError(f"unknown velocity mode {mode!r}")


def L_pm(state: LayerState) -> tuple[float, float, float, float]:
    """``(L_minus, L_plus, L_minus', L_plus')``: total length near -1 and near +1.

    Interval ``k`` of [0, 1] (between consecutive layers, with 0 and 1 as
    outer ends) is near the well ``(-1)**k``.
    """
    h = state.h.h if isinstance(state.h, LayerVector) else np.asarray(state.h, dtype=float)
    eta = np.asarray(state.eta, dtype=float)
    N = h.size - 1
    gaps = np.diff(np.concatenate(([-h[0]], h, [2.0 - h[-1]])))
    if N % 2 == 0:
        L_minus = 0.5 * gaps[0] + gaps[2:N + 1:2].sum()
        L_plus = gaps[1:N + 1:2].sum() + 0.5 * gaps[-1]
    else:
        L_minus = 0.5 * gaps[0] + gaps[2:N:2].sum() + 0.5 * gaps[-1]
        L_plus = gaps[1:N + 1:2].sum()
    # L_minus = h_1 - h_2 + h_3 - ... (+ 1 for odd N), so L_minus' = sum_i (-1)^(i+1) eta_i
    dL_minus = float(np.sum(eta * np.where(np.arange(1, N + 2) % 2 == 0, -1.0, 1.0)))
    return float(L_minus), float(L_plus), dL_minus, -dL_minus


# ---------------------------------------------------------------------------
# integration


@dataclass(eq=False)
class Trajectory:
    system: str
    t: np.ndarray
    h: np.ndarray  # (n_samples, N+1)
    eta: np.ndarray  # (n_samples, N+1)
    reason: str  # "t_end" | "collision" | "boundary"
    params: OdeParams
    event_time: float | None = None
    sol: object = field(default=None, repr=False)
    _pot: DoubleWellPotential | None = field(default=None, repr=False)

    def states(self) -> list[LayerState]:
        return [LayerState(LayerVector(h), e, float(t)) for t, h, e in zip(self.t, self.h, self.eta)]

    def at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Positions and velocities at times ``t`` from the dense output."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = self.sol(t)
        K = self.h.shape[1]
        if self.system == "classic":
            H = y.T
            E = np.array([P_of_h(hh, self.params, self._pot) for hh in H])
            return H, E
        return y[:K].T, y[K:].T

    def displacement(self) -> np.ndarray:
        """``s_i(t) = h_i(t) - h_i(0)`` at the stored samples."""
        return self.h - self.h[0]

    def to_csv(self, path: str | Path) -> None:
        K = self.h.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"h{i}" for i in range(1, K + 1)]
                            + [f"eta{i}" for i in range(1, K + 1)])
            for t, h, e in zip(self.t, self.h, self.eta):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in h]
                                + [repr(float(v)) for v in e])


def integrate(system: str, h0: LayerVector | np.ndarray, params: OdeParams,
              pot: DoubleWellPotential, eta0: np.ndarray | None = None,
              t_eval: Sequence[float] | None = None) -> Trajectory:
    """Integrate the classic or hyperbolic system until ``t_end`` or a collision.

    ``t_eval`` lists the sample times stored in the trajectory (the initial
    time is always stored); without it every accepted step is stored.
    """
    h0 = h0.h if isinstance(h0, LayerVector) else np.asarray(h0, dtype=float)
    K = h0.size
    if params.threshold >= 1.0 / K:
        raise ValidationFailure(f"eps/rho must be below 1/(N+1) = {1.0 / K:.4g}")
    gaps0 = np.diff(np.concatenate(([-h0[0]], h0, [2.0 - h0[-1]])))
    if np.any(gaps0 <= params.threshold):
        raise EventAtStart(f"initial min gap {gaps0.min():.6g} <= eps/rho = {params.threshold:.6g}")
    eps = params.eps
    mode = params.alpha_mode
    thr = params.threshold

    def min_gap_event(t, y):
        h = y[:K]
        return min(2.0 * h[0], float(np.min(np.diff(h))) if K > 1 else np.inf,
                   2.0 * (1.0 - h[-1])) - thr

    min_gap_event.terminal = True
    min_gap_event.direction = -1

    if system == "classic":
        def f(t, y):
            terms, _ = _p_terms(y, eps, pot, mode)
            return stack(terms)
        y0 = h0.copy()
    elif system == "hyperbolic":
        if not params.tau > 0:
            raise ValidationFailure("the hyperbolic system needs tau > 0; use system='classic'")
        if eta0 is None:
            raise ValidationFailure("the hyperbolic system needs initial velocities")
        tau = params.tau

        def f(t, y):
            h, e = y[:K], y[K:]
            terms, _ = _p_terms(h, eps, pot, mode)
            force = stack(terms) - e
            if K > 2:
                l = np.diff(h)
                force -= tau * stack((e[1:] ** 2 - e[:-1] ** 2) / (2.0 * l))
            return np.concatenate((e, force / tau))
        y0 = np.concatenate((h0, np.asarray(eta0, dtype=float)))
    else:
        raise ValueError(f"unknown system {system!r}")

    if t_eval is not None:
        t_eval = np.unique(np.concatenate(([0.0], np.asarray(t_eval, dtype=float))))
        t_eval = t_eval[t_eval <= params.t_end]
    sol = solve_ivp(
        f, (0.0, params.t_end), y0, method=params.method, t_eval=t_eval,
        rtol=params.rel_tol, atol=params.abs_tol, events=min_gap_event, dense_output=True,
    )
    if sol.status == -1:
        raise StepFailure(sol.message)
    Y = sol.y.T
    H = Y[:, :K]
    if system == "classic":
        E = np.array([stack(_p_terms(hh, eps, pot, mode)[0]) for hh in H])
    else:
        E = Y[:, K:]
    reason, t_event = "t_end", None
    if sol.status == 1:
        t_event = float(sol.t_events[0][0])
        y_ev = sol.y_events[0][0][:K]
        # which gap closed: the boundary gaps are l_1 and l_{N+2}
        gaps = np.diff(np.concatenate(([-y_ev[0]], y_ev, [2.0 - y_ev[-1]])))
        closing = int(np.argmin(gaps))
        reason = "boundary" if closing in (0, gaps.size - 1) else "collision"
    return Trajectory(system, sol.t.copy(), H, E, reason, params, t_event, sol.sol, pot)


# ---------------------------------------------------------------------------
# singular limit


@dataclass(frozen=True)
class TauLimitReport:
    tau: np.ndarray
    sup_h_err: np.ndarray
    int_eta_err: np.ndarray
    sup_eta_err_t1: np.ndarray
    t1: float

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau", "sup_h_err", "int_eta_err", "sup_eta_err_t1"])
            for row in zip(self.tau, self.sup_h_err, self.int_eta_err, self.sup_eta_err_t1):
                writer.writerow([repr(float(v)) for v in row])

    def slope(self, which: str = "sup_h_err") -> float:
        """Least-squares slope of log(error) against log(tau)."""
        err = getattr(self, which)
        if self.tau.size < 2:
            return math.nan
        return float(np.polyfit(np.log(self.tau), np.log(err), 1)[0])


def compare_tau_limit(h0: LayerVector | np.ndarray, tau_list: Sequence[float], t_end: float,
                      params: OdeParams, pot: DoubleWellPotential, *,
                      M_target: float | None = None, profile: ProfileParams | None = None,
                      t1: float | None = None, n_samples: int = 4001,
                      stiff_method: str = "Radau") -> TauLimitReport:
    """Distance between hyperbolic (tau > 0) and classic trajectories.

    Each hyperbolic run starts from ``eta(0) = P(h0)``, so the initial error is
    zero.  Entries of ``tau_list`` equal to 0 compare the classic system with
    itself.  If ``M_target`` is given, ``h0`` holds only the first N positions
    and the last one is fixed by mass matching (``profile`` is then required).
    """
    h0 = h0.h if isinstance(h0, LayerVector) else np.asarray(h0, dtype=float)
    if M_target is not None:
        if profile is None:
            raise ValidationFailure("mass matching needs profile parameters")
        h0 = np.append(h0, solve_hN1(h0, M_target, profile, pot))
    t1 = 0.1 * t_end if t1 is None else t1
    base = dict(eps=params.eps, rho=params.rho, delta=params.delta, rel_tol=params.rel_tol,
                abs_tol=params.abs_tol, t_end=t_end, alpha_mode=params.alpha_mode)
    classic = integrate("classic", h0, OdeParams(tau=0.0, method=params.method, **base), pot)
    if classic.reason != "t_end":
        raise DomainError(f"classic trajectory hits an event at t={classic.event_time:.6g} < t_end")
    ts = np.linspace(0.0, t_end, n_samples)
    Hc, Ec = classic.at(ts)
    late = ts >= t1
    rows = []
    for tau in tau_list:
        if tau == 0:
            H, E = Hc, Ec
        else:
            p = OdeParams(tau=float(tau), method=stiff_method, **base)
            traj = integrate("hyperbolic", h0, p, pot, eta0=initial_velocities(h0, "forward", p, pot))
            if traj.reason != "t_end":
                raise DomainError(f"hyperbolic trajectory (tau={tau}) hits an event before t_end")
            H, E = traj.at(ts)
        dh = np.max(np.abs(H - Hc), axis=1)
        de = np.max(np.abs(E - Ec), axis=1)
        rows.append((float(tau), dh.max(), float(np.trapezoid(de, ts)), de[late].max()))
    arr = np.array(rows)
    return TauLimitReport(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], t1)
