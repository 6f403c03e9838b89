"""Finite-difference solver for the full hyperbolic Cahn-Hilliard equation.

The equation ``tau u_tt + u_t = (-eps^2 u_xx + F'(u))_xx`` on (0, 1) with
``u_x = u_xxx = 0`` at both ends is written as the first-order system

    u_t = v,    tau v_t = -v - eps^2 D4 u + D2 F'(u),

on the nodes ``x_i = i/n``.  ``D2`` is the centred second difference with
even-reflection ghosts (which enforces both boundary conditions at once) and
``D4 = D2 D2``.  Both annihilate constants and satisfy ``w^T D2 = 0`` for the
trapezoid weights ``w``, so the discrete mass only changes through the mean of
``v``.

Time stepping is linearly implicit: damping and the fourth-order term are
treated implicitly, ``D2 F'(u)`` explicitly.  The implicit matrix is constant,
so it is factored once.

* ``imex_be``:  (tau + dt) v+ + dt^2 eps^2 D4 v+ = tau v - dt eps^2 D4 u + dt g(u),
                u+ = u + dt v+
* ``imex_cn``:  Crank-Nicolson on the linear part, second-order
                Adams-Bashforth on ``g``.

An integrated formulation (``u~ = int_0^x u``, Dirichlet data ``u~(0) = 0``,
``u~(1) = M`` and ``u~_xx = 0`` at the ends) is available as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DomainError, NoLayers, NoRoot, SolveFailure, ValidationFailure
from .potential import DoubleWellPotential
from .profile import (
    Field,
    LayerVector,
    ProfileParams,
    build_uh,
    solve_hN1,
    uh_function,
    uniform_grid,
)

__all__ = [
    "PdeParams",
    "PdeRun",
    "PdeState",
    "Report",
    "d2_matrix",
    "diagnostics",
    "energy",
    "extract_layers",
    "initial_data",
    "integrate_pde",
    "spatial_operator",
    "stability_radius",
    "step",
    "tangent_velocity",
    "trapezoid_mass",
    "VELOCITY_MODES",
]

SCHEMES = ("imex_be", "imex_cn")


@dataclass(frozen=True)
class PdeParams:
    eps: float
    tau: float
    n: int
    dt: float
    scheme: str = "imex_be"
    t_end: float = 1.0
    stride: int = 1000

    def __post_init__(self):
        if not (self.eps > 0 and self.dt > 0 and self.t_end > 0):
            raise ValidationFailure("eps, dt and t_end must be positive")
        if self.tau < 0:
            raise ValidationFailure(f"tau must be non-negative, got {self.tau}")
        if self.n < 4:
            raise ValidationFailure("need at least 4 grid intervals")
        if self.dx > self.eps / 8.0 * (1 + 1e-12):
            raise ValidationFailure(f"dx = {self.dx:.4g} must be <= eps/8 = {self.eps / 8:.4g}")
        if self.scheme not in SCHEMES:
            raise ValidationFailure(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.stride < 1:
            raise ValidationFailure("stride must be at least 1")

    @property
    def dx(self) -> float:
        return 1.0 / self.n

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True, eq=False)
class PdeState:
    u: Field
    v: Field
    t: float
    m0: float
    # explicit term of the previous step (second-order scheme only)
    g_prev: np.ndarray | None = field(default=None, repr=False)

    @property
    def mass(self) -> float:
        return trapezoid_mass(self.u.u, self.u.x)


# ---------------------------------------------------------------------------
# spatial discretisation


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.full(n + 1, 1.0 / n)
    w[0] = w[-1] = 0.5 / n
    return w


def trapezoid_mass(u: np.ndarray, x: np.ndarray | None = None) -> float:
    n = u.size - 1
    return float(trapezoid_weights(n) @ u)


def d2_matrix(n: int) -> sp.csr_matrix:
    """Second difference on nodes 0..n with even reflection at both ends."""
    dx2 = (1.0 / n) ** 2
    main = np.full(n + 1, -2.0)
    upper = np.ones(n)
    lower = np.ones(n)
    upper[0] = 2.0
    lower[-1] = 2.0
    return (sp.diags([lower, main, upper], [-1, 0, 1]) / dx2).tocsr()


def _d2(f: np.ndarray, dx: float) -> np.ndarray:
    g = np.empty_like(f)
    g[1:-1] = f[2:] - 2.0 * f[1:-1] + f[:-2]
    g[0] = 2.0 * (f[1] - f[0])
    g[-1] = 2.0 * (f[-2] - f[-1])
    return g / (dx * dx)


def spatial_operator(u: Field, pot: DoubleWellPotential, eps: float) -> Field:
    """``D2 (-eps^2 D2 u + F'(u))``, the right-hand side of the classic equation."""
    dx = float(u.x[1] - u.x[0])
    mu = -eps * eps * _d2(u.u, dx) + pot.F1(u.u)
    return Field(u.x, _d2(mu, dx))


def energy(u: np.ndarray, eps: float, pot: DoubleWellPotential) -> float:
    """``int eps^2 u_x^2 / 2 + F(u)``: cell differences for the gradient, trapezoid for F."""
    n = u.size - 1
    dx = 1.0 / n
    grad = np.diff(u) / dx
    return float(0.5 * eps * eps * dx * np.sum(grad * grad) + trapezoid_weights(n) @ pot.F(u))


# ---------------------------------------------------------------------------
# stability of the linearised schemes


def _f2_samples(pot: DoubleWellPotential, u_range=(-1.1, 1.1), k: int = 45) -> np.ndarray:
    return np.asarray(pot.F2(np.linspace(*u_range, k)), dtype=float)


def stability_radius(params: PdeParams, pot: DoubleWellPotential, u_range=(-1.1, 1.1)) -> float:
    """Largest amplification factor of the scheme, linearised about constants.

    Every Fourier mode ``cos(k pi x)`` of the discrete operator is combined
    with ``F''`` sampled over ``u_range``.  Modes that grow for the continuous
    problem (spinodal modes, ``eps^2 |lambda| + F'' < 0``) are excluded.
    """
    n, dt, tau, eps = params.n, params.dt, params.tau, params.eps
    k = np.arange(1, n + 1)
    lam = -4.0 * n * n * np.sin(k * np.pi / (2 * n)) ** 2
    L, f2 = np.meshgrid(lam, _f2_samples(pot, u_range), indexing="ij")
    keep = eps * eps * np.abs(L) + f2 >= 0
    L, f2 = L[keep], f2[keep]
    e4 = eps * eps * L * L
    if params.scheme == "imex_be":
        c = tau + dt + dt * dt * e4
        a = dt * (-e4 + L * f2) / c
        b = tau / c
        M = np.empty((L.size, 2, 2))
        M[:, 0, 0] = 1.0 + dt * a
        M[:, 0, 1] = dt * b
        M[:, 1, 0] = a
        M[:, 1, 1] = b
    else:
        c = tau + 0.5 * dt + 0.25 * dt * dt * e4
        gv = (tau - 0.5 * dt - 0.25 * dt * dt * e4) / c
        gu = (-dt * e4 + 1.5 * dt * L * f2) / c
        gg = -0.5 * dt / c
        # state (u, v, g_prev) with g_prev = lambda F'' u of the previous step
        M = np.zeros((L.size, 3, 3))
        M[:, 1, 0] = gu
        M[:, 1, 1] = gv
        M[:, 1, 2] = gg
        M[:, 0, 0] = 1.0 + 0.5 * dt * gu
        M[:, 0, 1] = 0.5 * dt * (1.0 + gv)
        M[:, 0, 2] = 0.5 * dt * gg
        M[:, 2, 0] = L * f2
    return float(np.max(np.abs(np.linalg.eigvals(M))))


# ---------------------------------------------------------------------------
# steppers


class _Stepper:
    def __init__(self, params: PdeParams, pot: DoubleWellPotential):
        radius = stability_radius(params, pot)
        if radius > 1.0 + 1e-9:
            raise ValidationFailure(
                f"dt={params.dt} is unstable for this grid and scheme "
                f"(amplification {radius:.6g} > 1); reduce dt"
            )
        self.params = params
        self.pot = pot
        n, dt, tau, eps = params.n, params.dt, params.tau, params.eps
        self.dx = 1.0 / n
        self.w = trapezoid_weights(n)
        D2 = d2_matrix(n)
        self.D4 = (D2 @ D2).tocsr()
        eye = sp.identity(n + 1, format="csc")
        if params.scheme == "imex_be":
            A = (tau + dt) * eye + dt * dt * eps * eps * self.D4
            self.v_factor = tau / (tau + dt)
        else:
            A = (tau + 0.5 * dt) * eye + 0.25 * dt * dt * eps * eps * self.D4
            self.B = ((tau - 0.5 * dt) * eye - 0.25 * dt * dt * eps * eps * self.D4).tocsr()
            self.v_factor = (tau - 0.5 * dt) / (tau + 0.5 * dt)
        try:
            self.lu = splu(A.tocsc())
        except RuntimeError as exc:  # pragma: no cover - A is positive definite for dt > 0
            raise SolveFailure(str(exc)) from exc

    def g(self, u: np.ndarray) -> np.ndarray:
        return _d2(self.pot.F1(u), self.dx)

    def advance(self, u: np.ndarray, v: np.ndarray, g_prev: np.ndarray | None):
        p = self.params
        dt, eps, tau = p.dt, p.eps, p.tau
        g = self.g(u)
        D4u = self.D4 @ u
        if p.scheme == "imex_be":
            rhs = tau * v - dt * eps * eps * D4u + dt * g
        else:
            G = g if g_prev is None else 1.5 * g - 0.5 * g_prev
            rhs = self.B @ v - dt * eps * eps * D4u + dt * G
        v_new = self.lu.solve(rhs)
        if not np.all(np.isfinite(v_new)):
            raise SolveFailure("non-finite values in the implicit solve")
        # the weighted mean of v obeys an exact scalar recursion; restore it
        # so cancellation in the large D2/D4 terms cannot accumulate as drift
        target = self.v_factor * (self.w @ v)
        v_new -= (self.w @ v_new - target) / self.w.sum()
        if p.scheme == "imex_be":
            u_new = u + dt * v_new
        else:
            u_new = u + 0.5 * dt * (v_new + v)
        return u_new, v_new, g


@lru_cache(maxsize=32)
def _stepper(params: PdeParams, pot: DoubleWellPotential) -> _Stepper:
    return _Stepper(params, pot)


def step(state: PdeState, params: PdeParams, pot: DoubleWellPotential) -> PdeState:
    """Advance one time step."""
    st = _stepper(params, pot)
    u, v, g = st.advance(state.u.u, state.v.u, state.g_prev)
    x = state.u.x
    return PdeState(Field(x, u), Field(x, v), state.t + params.dt, state.m0,
                    g if params.scheme == "imex_cn" else None)


# ---------------------------------------------------------------------------
# initial data and layers


def tangent_velocity(h0: LayerVector, eta: np.ndarray, x: np.ndarray, profile: ProfileParams,
                     pot: DoubleWellPotential, step: float = 1e-6) -> np.ndarray:
    """``sum_j eta_j d u^h / d h_j`` on ``x`` by centred differences in each h_j.

    This is the velocity field of ``u^{h(t)}`` when the layers move with speeds
    ``eta``: it carries no component transverse to the family of states u^h.
    """
    out = np.zeros_like(x)
    for j, e in enumerate(np.asarray(eta, dtype=float)):
        if e == 0.0:
            continue
        hp, hm = h0.h.copy(), h0.h.copy()
        hp[j] += step
        hm[j] -= step
        up = uh_function(LayerVector(hp), profile, pot)(x)
        um = uh_function(LayerVector(hm), profile, pot)(x)
        out += e * (up - um) / (2.0 * step)
    return out


VELOCITY_MODES = ("forward", "reversed", "zero", "tangent", "tangent_reversed")


def initial_data(h0: LayerVector, mode: str, params: PdeParams, profile: ProfileParams,
                 pot: DoubleWellPotential) -> tuple[Field, Field]:
    """``u0 = u^{h0}`` on the grid and ``u1`` per ``mode``.

    * ``forward``: ``u1 = D2 (-eps^2 D2 u0 + F'(u0))``, the classic
      Cahn-Hilliard velocity of ``u0``; ``reversed`` negates it.
    * ``zero``: ``u1 = 0``.
    * ``tangent``: the layers of ``u^h`` move with the classic reduced
      velocities ``P(h0)`` and nothing else moves; ``tangent_reversed``
      negates it.  ``u^h`` is only an approximate equilibrium, and when eps is
      not small its residual makes the forward field far larger than its
      component along the layer motion; the tangent field keeps only that
      component.

    In every mode the discrete mean of ``u1`` is exactly zero.
    """
    h0.require_omega(profile.eps, profile.rho)
    u0 = build_uh(h0, profile, pot, uniform_grid(params.n))
    if mode == "zero":
        u1 = np.zeros_like(u0.u)
    elif mode in ("forward", "reversed"):
        u1 = spatial_operator(u0, pot, params.eps).u
        if mode == "reversed":
            u1 = -u1
    elif mode in ("tangent", "tangent_reversed"):
        from .layer_ode import OdeParams, rhs_classic

        ode = OdeParams(eps=profile.eps, tau=0.0, rho=profile.rho)
        eta = rhs_classic(h0, ode, pot)
        if mode == "tangent_reversed":
            eta = -eta
        u1 = tangent_velocity(h0, eta, u0.x, profile, pot)
    else:
        raise ValueError(f"unknown velocity mode {mode!r}; expected one of {VELOCITY_MODES}")
    u1 = u1 - trapezoid_mass(u1)  # exact zero mean (removes round-off and O(beta/eps) terms)
    return u0, Field(u0.x, u1)


def extract_layers(u: Field, guard: float = 4.0) -> np.ndarray:
    """Zero crossings of ``u`` by linear interpolation.

    A crossing within ``guard`` grid spacings of the previously accepted one
    is ignored.
    """
    vals = np.asarray(u.u, dtype=float)
    if np.max(np.abs(vals)) <= 0.5:
        raise NoLayers("field has no developed structure (|u| <= 0.5 everywhere)")
    s = np.sign(vals)
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    exact = np.flatnonzero(vals[1:-1] == 0.0) + 1
    pts = []
    for i in idx:
        x0, x1 = u.x[i], u.x[i + 1]
        pts.append(x0 - vals[i] * (x1 - x0) / (vals[i + 1] - vals[i]))
    pts.extend(u.x[exact])
    if not pts:
        raise NoLayers("field has constant sign")
    pts = np.sort(np.asarray(pts))
    dx = float(np.max(np.diff(u.x)))
    kept = [pts[0]]
    for p in pts[1:]:
        if p - kept[-1] >= guard * dx:
            kept.append(p)
    return np.asarray(kept)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class Report:
    t: float
    mass: float
    mass_drift: float
    energy: float
    layers: np.ndarray
    h_ref: np.ndarray
    sup_dist: float
    min_gap: float
    scaled_ratio: float

    def as_dict(self) -> dict:
        return {
            "t": self.t, "mass": self.mass, "mass_drift": self.mass_drift, "energy": self.energy,
            "layers": [float(v) for v in self.layers], "h_ref": [float(v) for v in self.h_ref],
            "sup_dist": self.sup_dist, "min_gap": self.min_gap, "scaled_ratio": self.scaled_ratio,
        }


def diagnostics(state: PdeState, params: PdeParams, profile: ProfileParams,
                pot: DoubleWellPotential, h_ref: LayerVector | None = None) -> Report:
    """Mass, energy and the distance of ``u`` from the nearest ``u^h``.

    Without an explicit ``h_ref`` the reference layers are the extracted zero
    crossings with the last one moved so that ``u^h`` carries the mass of ``u``.
    """
    u = state.u
    m = trapezoid_mass(u.u)
    layers = extract_layers(u)
    if h_ref is None:
        h_ref = LayerVector(layers)
        if len(layers) > 1:
            try:
                last = solve_hN1(layers[:-1], m, profile, pot)
                h_ref = LayerVector(np.append(layers[:-1], last))
            except (NoRoot, DomainError):
                pass
    uh = uh_function(h_ref, profile, pot)(u.x)
    dist = float(np.max(np.abs(u.u - uh)))
    ell = h_ref.min_gap
    eps = profile.eps
    ratio = dist * eps ** 2.5 * math.exp(pot.A * ell / eps)
    return Report(state.t, m, m - state.m0, energy(u.u, eps, pot), layers, h_ref.h.copy(),
                  dist, ell, ratio)


# ---------------------------------------------------------------------------
# integrated form


class _IntegratedStepper:
    """Backward-Euler IMEX for ``u~`` at the interior nodes 1..n-1.

    ``u~ = M x + z`` with ``z`` vanishing at both ends; odd reflection of
    ``z`` gives ``u~_xx = 0`` there.  Cell slopes ``(u~_{i+1} - u~_i)/dx`` are
    the values of ``u`` at cell midpoints.
    """

    def __init__(self, params: PdeParams, pot: DoubleWellPotential, M: float):
        if params.scheme != "imex_be":
            raise ValidationFailure("the integrated form is implemented for imex_be only")
        self.params, self.pot, self.M = params, pot, M
        n = params.n
        self.dx = 1.0 / n
        m = n - 1
        D2 = sp.diags([np.ones(m - 1), np.full(m, -2.0), np.ones(m - 1)], [-1, 0, 1]) / self.dx ** 2
        self.D4 = (D2 @ D2).tocsr()
        eye = sp.identity(m, format="csc")
        dt, tau, eps = params.dt, params.tau, params.eps
        self.lu = splu(((tau + dt) * eye + dt * dt * eps * eps * self.D4).tocsc())
        self.x = uniform_grid(n)

    def full(self, z: np.ndarray) -> np.ndarray:
        return np.concatenate(([0.0], z, [0.0])) + self.M * self.x

    def nonlinear(self, z: np.ndarray) -> np.ndarray:
        ut = self.full(z)
        fp = self.pot.F1(np.diff(ut) / self.dx)
        return np.diff(fp) / self.dx

    def L(self, z: np.ndarray) -> np.ndarray:
        eps = self.params.eps
        return -eps * eps * (self.D4 @ z) + self.nonlinear(z)

    def advance(self, z: np.ndarray, vz: np.ndarray):
        p = self.params
        rhs = p.tau * vz - p.dt * p.eps ** 2 * (self.D4 @ z) + p.dt * self.nonlinear(z)
        vz_new = self.lu.solve(rhs)
        return z + p.dt * vz_new, vz_new


def integrated_initial_data(h0: LayerVector, mode: str, params: PdeParams,
                            profile: ProfileParams, pot: DoubleWellPotential):
    """Cell-midpoint samples of ``u^{h0}`` summed into ``u~`` and the matching ``v~``."""
    n = params.n
    xm = (np.arange(n) + 0.5) / n
    um = uh_function(h0, profile, pot)(xm)
    ut = np.concatenate(([0.0], np.cumsum(um) / n))
    M = float(ut[-1])
    st = _IntegratedStepper(params, pot, M)
    z = ut[1:-1] - M * st.x[1:-1]
    if mode == "zero":
        vz = np.zeros_like(z)
    elif mode in ("forward", "reversed"):
        vz = st.L(z) * (1.0 if mode == "forward" else -1.0)
    else:
        raise ValueError(f"unknown velocity mode {mode!r}")
    return st, z, vz


# ---------------------------------------------------------------------------
# driver


@dataclass(eq=False)
class PdeRun:
    params: PdeParams
    form: str
    snapshots: list[PdeState]
    layer_t: np.ndarray
    layer_h: list[np.ndarray]
    mass: np.ndarray

    @property
    def max_mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))

    def layer_array(self) -> np.ndarray:
        """Layer positions as an array when the layer count never changes."""
        counts = {len(h) for h in self.layer_h}
        if len(counts) != 1:
            raise NoLayers(f"layer count changes along the run: {sorted(counts)}")
        return np.vstack(self.layer_h)


def integrate_pde(params: PdeParams, pot: DoubleWellPotential, *,
                  h0: LayerVector | Sequence[float] | None = None, profile: ProfileParams | None = None,
                  mode: str = "forward", u0: Field | None = None, u1: Field | None = None,
                  form: str = "primal",
                  on_snapshot: Callable[[PdeState], None] | None = None,
                  keep_snapshots: bool = True) -> PdeRun:
    """Step to ``t_end``, recording a snapshot and the layers every ``stride`` steps.

    Pass either ``h0`` with ``profile`` (initial data from ``u^{h0}``) or
    explicit fields ``u0`` and ``u1``.  ``form="integrated"`` runs the
    integrated Dirichlet formulation instead and reports ``u`` at cell
    midpoints.
    """
    if h0 is not None and not isinstance(h0, LayerVector):
        h0 = LayerVector(h0)
    if form == "integrated":
        return _integrate_integrated(params, pot, h0, profile, mode, on_snapshot, keep_snapshots)
    if form != "primal":
        raise ValueError(f"unknown form {form!r}")
    if u0 is None:
        if h0 is None or profile is None:
            raise ValidationFailure("need h0 and profile parameters, or explicit u0/u1")
        u0, u1 = initial_data(h0, mode, params, profile, pot)
    elif u1 is None:
        u1 = Field(u0.x, np.zeros_like(u0.u))
    if u0.u.size != params.n + 1:
        raise ValidationFailure("initial field does not match the grid size")
    state = PdeState(u0, u1, 0.0, trapezoid_mass(u0.u))
    snaps, lt, lh, masses = [], [], [], []

    def record(s: PdeState):
        masses.append(s.mass)
        try:
            lh.append(extract_layers(s.u))
            lt.append(s.t)
        except NoLayers:
            pass
        if keep_snapshots:
            snaps.append(s)
        if on_snapshot is not None:
            on_snapshot(s)

    record(state)
    for k in range(1, params.n_steps + 1):
        state = step(state, params, pot)
        if k % params.stride == 0 or k == params.n_steps:
            record(state)
    return PdeRun(params, "primal", snaps, np.asarray(lt), lh, np.asarray(masses))


def _integrate_integrated(params, pot, h0, profile, mode, on_snapshot, keep_snapshots) -> PdeRun:
    if h0 is None or profile is None:
        raise ValidationFailure("the integrated form needs h0 and profile parameters")
    st, z, vz = integrated_initial_data(h0, mode, params, profile, pot)
    n = params.n
    xm = (np.arange(n) + 0.5) / n
    snaps, lt, lh, masses = [], [], [], []

    def record(t, z, vz):
        ut = st.full(z)
        um = np.diff(ut) * n
        vt = np.concatenate(([0.0], vz, [0.0]))
        vm = np.diff(vt) * n
        s = PdeState(Field(xm, um), Field(xm, vm), t, st.M)
        masses.append(float(ut[-1]))
        try:
            lh.append(extract_layers(s.u))
            lt.append(t)
        except NoLayers:
            pass
        if keep_snapshots:
            snaps.append(s)
        if on_snapshot is not None:
            on_snapshot(s)

    record(0.0, z, vz)
    for k in range(1, params.n_steps + 1):
        z, vz = st.advance(z, vz)
        if k % params.stride == 0 or k == params.n_steps:
            record(k * params.dt, z, vz)
    return PdeRun(params, "integrated", snaps, np.asarray(lt), lh, np.asarray(masses))
