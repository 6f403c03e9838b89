"""Standing waves, the approximate metastable states u^h and the mass map.

Layer positions ``h_1 < ... < h_{N+1}`` split (0, 1) into gaps; with the
reflected ghosts ``h_0 = -h_1`` and ``h_{N+2} = 2 - h_{N+1}`` there are
``N + 2`` gaps ``l_j = h_j - h_{j-1}``.  On gap ``j`` the state sits near the
well ``(-1)**j`` (so the field starts negative at x = 0) and is modelled by the
standing wave ``phi(x; l_j, (-1)**j)``: the solution of
``-eps^2 phi'' + F'(phi) = 0`` on ``(-l/2, l/2)`` vanishing at both ends.

The standing wave is computed from its first integral.  Writing the distance
to the well as ``d = 1 - |phi|`` and ``beta = 1 - |m|`` for the centre value
``m``, the substitution ``|phi| = |m| cos w`` turns the half-length condition
into the regular integral

    l / (2 eps) = int_0^{pi/2} |m| sin w / sqrt(2 (G(d) - G(beta))) dw,

with ``G(d) = F(s (1 - d))`` and ``d - beta = 2 sin^2(w/2) |m|``.  For small
``beta`` the integrand varies on the scale ``w ~ sqrt(beta)``, which sets the
geometric panel grading below.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from .errors import DomainError, NoRoot, NoSolution, QuadratureFailure, ValidationFailure
from .potential import DoubleWellPotential

__all__ = [
    "AlphaTable",
    "Field",
    "LayerVector",
    "ProfileParams",
    "ResidualReport",
    "StandingWaveSolution",
    "ac_residual",
    "alpha_beta",
    "barrier_psi",
    "build_uh",
    "chi",
    "gap_alphas",
    "mass",
    "solve_hN1",
    "solve_phi",
    "uh_function",
    "uniform_grid",
]

MIN_LENGTH_RATIO = 5.0
# relative slack on the cut-off: the two-layer test configuration has a gap of
# exactly 5 eps, which must survive round-off and finite-difference nudges
_RATIO_SLACK = 1e-4
_HALF_PI = 0.5 * math.pi


# ---------------------------------------------------------------------------
# parameter and data containers


@dataclass(frozen=True)
class ProfileParams:
    eps: float
    rho: float
    delta: float
    N: int
    # smallest gap (in units of eps) for which standing waves are built
    min_ratio: float = MIN_LENGTH_RATIO

    def __post_init__(self):
        if not self.eps > 0:
            raise ValidationFailure(f"eps must be positive, got {self.eps}")
        if self.N < 0:
            raise ValidationFailure(f"N must be non-negative, got {self.N}")
        if not (self.rho > 0 and self.delta > 0):
            raise ValidationFailure("rho and delta must be positive")
        threshold = self.eps / self.rho
        if not (self.delta < threshold < 1.0 / (self.N + 1)):
            raise ValidationFailure(
                f"need delta < eps/rho < 1/(N+1); got delta={self.delta}, "
                f"eps/rho={threshold:.6g}, 1/(N+1)={1.0 / (self.N + 1):.6g}"
            )

    @property
    def threshold(self) -> float:
        """Minimal admissible gap ``eps / rho``."""
        return self.eps / self.rho


@dataclass(frozen=True, eq=False)
class LayerVector:
    """Ordered transition positions in (0, 1)."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(-1)
        if h.size == 0:
            raise ValidationFailure("a layer vector needs at least one position")
        if np.any(np.diff(h) <= 0):
            raise ValidationFailure(f"layer positions must be strictly increasing: {h}")
        if h[0] <= 0 or h[-1] >= 1:
            raise ValidationFailure(f"layer positions must lie in (0, 1): {h}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def __len__(self) -> int:
        return self.h.size

    def __eq__(self, other) -> bool:
        return isinstance(other, LayerVector) and np.array_equal(self.h, other.h)

    @property
    def N(self) -> int:
        return self.h.size - 1

    @property
    def extended(self) -> np.ndarray:
        """``(h_0, h_1, ..., h_{N+1}, h_{N+2})`` including the reflected ghosts."""
        return np.concatenate(([-self.h[0]], self.h, [2.0 - self.h[-1]]))

    @property
    def gaps(self) -> np.ndarray:
        """``l_1 .. l_{N+2}``; ``l_1 = 2 h_1`` and ``l_{N+2} = 2 (1 - h_{N+1})``."""
        return np.diff(self.extended)

    @property
    def midpoints(self) -> np.ndarray:
        """Gap centres ``h_{j-1/2}`` for j = 1..N+2 (the first is 0, the last is 1)."""
        ext = self.extended
        return 0.5 * (ext[1:] + ext[:-1])

    def ratios(self, eps: float) -> np.ndarray:
        return eps / self.gaps

    @property
    def min_gap(self) -> float:
        return float(self.gaps.min())

    def in_omega(self, eps: float, rho: float) -> bool:
        return bool(np.all(self.gaps > eps / rho))

    def require_omega(self, eps: float, rho: float) -> None:
        if not self.in_omega(eps, rho):
            raise DomainError(
                f"configuration leaves Omega_rho: min gap {self.min_gap:.6g} <= eps/rho = {eps / rho:.6g}"
            )

    def to_json(self) -> str:
        return json.dumps([float(v) for v in self.h])

    @classmethod
    def from_json(cls, text: str) -> "LayerVector":
        return cls(np.asarray(json.loads(text), dtype=float))


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a scalar field on nodes covering [0, 1]."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.x.shape != self.u.shape:
            raise ValidationFailure("grid and values must have the same shape")

    @property
    def dx(self) -> float:
        return float(np.max(np.diff(self.x)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "u"])
            for xi, ui in zip(self.x, self.u):
                writer.writerow([repr(float(xi)), repr(float(ui))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Field":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0].copy(), data[:, 1].copy())


def uniform_grid(n: int) -> np.ndarray:
    """Nodes ``x_i = i / n`` for i = 0..n."""
    return np.linspace(0.0, 1.0, n + 1)


# ---------------------------------------------------------------------------
# standing waves


def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


_GL_HI = _gauss(20)
_GL_LO = _gauss(14)
_GL_TAB = _gauss(6)


def _integrand(w, beta: float, sign: int, pot: DoubleWellPotential):
    """``|m| sin w / sqrt(2 (G(d) - G(beta)))``; the w -> 0 limit is finite."""
    m_abs = 1.0 - beta
    dmb = 2.0 * np.sin(0.5 * w) ** 2 * m_abs
    d = beta + dmb
    D = pot.drop(sign, d, beta, dmb)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = m_abs * np.sin(w) / np.sqrt(2.0 * D)
    # at w = 0 both numerator and denominator vanish linearly
    slope = float(pot.near_well_slope(sign, beta))
    limit = math.sqrt(m_abs / slope) if slope > 0 else np.nan
    return np.where(w == 0.0, limit, out)


def _panel_sum(edges: np.ndarray, rule, beta: float, sign: int, pot) -> np.ndarray:
    """Integral of the half-length integrand over each panel."""
    nodes, weights = rule
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    w = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    vals = _integrand(w, beta, sign, pot)
    return half * (vals @ weights)


def _graded_edges(beta: float, upper: float = _HALF_PI) -> np.ndarray:
    start = 0.05 * math.sqrt(beta)
    edges = [0.0]
    w = start
    while w < upper:
        edges.append(w)
        w *= 2.0
    edges.append(upper)
    return np.asarray(edges)


def half_length(beta: float, sign: int, pot: DoubleWellPotential) -> float:
    """Half-length ``l / (2 eps)`` of the standing wave with ``1 - |m| = beta``."""
    edges = _graded_edges(beta)
    hi = _panel_sum(edges, _GL_HI, beta, sign, pot).sum()
    lo = _panel_sum(edges, _GL_LO, beta, sign, pot).sum()
    if not np.isfinite(hi) or abs(hi - lo) > 1e-12 * abs(hi):
        raise QuadratureFailure(
            f"half-length quadrature not converged at beta={beta:.3e}: {hi!r} vs {lo!r}"
        )
    return float(hi)


def _solve_beta(ratio: float, sign: int, pot: DoubleWellPotential) -> float:
    """Find beta with half_length(beta) = ratio / 2, bracketing around the asymptotic guess."""
    A, K = pot.well(sign)
    target = 0.5 * ratio

    def f(log_beta: float) -> float:
        return half_length(math.exp(log_beta), sign, pot) - target

    guess = math.log(K) - 0.5 * A * ratio
    # centre values far from the well are only reached for l/eps near the
    # linear cut-off; approach beta = 1 gently
    log_max = math.log(0.99)
    lo, hi = guess - 4.0, min(guess + 4.0, math.log(0.5))
    for _ in range(40):
        flo = f(lo)
        if flo > 0:
            break
        lo -= 4.0
    else:
        raise NoSolution(f"could not bracket the standing wave for l/eps={ratio}")
    for _ in range(40):
        fhi = f(hi)
        if fhi < 0:
            break
        if hi >= log_max:
            raise NoSolution(f"no standing wave of length l/eps={ratio} on branch {sign:+d}")
        hi = min(hi + 1.0, log_max)
    else:
        raise NoSolution(f"could not bracket the standing wave for l/eps={ratio}")
    log_beta = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return math.exp(log_beta)


@dataclass(frozen=True, eq=False)
class StandingWaveSolution:
    ell: float
    eps: float
    sign: int
    m: float
    alpha: float
    beta: float
    # tabulated inverse x -> w on [0, reach]
    _w_of_x: CubicHermiteSpline
    reach: float
    _pot: DoubleWellPotential

    def _w(self, x) -> np.ndarray:
        ax = np.abs(np.asarray(x, dtype=float))
        if np.any(ax > self.reach * (1 + 1e-12)):
            raise ValueError(
                f"standing wave is tabulated for |x| <= {self.reach:.6g}, got {ax.max():.6g}"
            )
        return self._w_of_x(np.minimum(ax, self.reach))

    def __call__(self, x) -> np.ndarray:
        """phi(x) for x measured from the centre of the gap."""
        return self.sign * (1.0 - self.beta) * np.cos(self._w(x))

    def derivative(self, x) -> np.ndarray:
        """phi'(x) from the first integral, signed by the side of the centre."""
        x = np.asarray(x, dtype=float)
        w = self._w(x)
        m_abs = 1.0 - self.beta
        dmb = 2.0 * np.sin(0.5 * w) ** 2 * m_abs
        D = self._pot.drop(self.sign, self.beta + dmb, self.beta, dmb)
        speed = np.sqrt(2.0 * np.maximum(D, 0.0)) / self.eps
        return -self.sign * np.sign(x) * speed

    def sampler(self) -> Callable[[np.ndarray], np.ndarray]:
        return self.__call__


def _tabulate(beta: float, sign: int, pot: DoubleWellPotential, ell: float, eps: float):
    """Knots of the map w -> x on the half wave and a short extension past the zero."""
    q = 1.004
    step = 0.004
    w_min = 1e-3 * math.sqrt(beta)
    n_geo = max(int(math.ceil(math.log(_HALF_PI / w_min) / math.log(q))), 1)
    geo = w_min * q ** np.arange(n_geo)
    uni = np.arange(0.0, _HALF_PI, step)
    knots = np.unique(np.concatenate(([0.0], geo[geo < _HALF_PI], uni, [_HALF_PI])))
    # drop knots closer than a tiny fraction of the local spacing
    keep = np.concatenate(([True], np.diff(knots) > 1e-3 * np.minimum(knots[1:], step)))
    knots = knots[keep]
    # extension past the zero so the blend on [h_j - eps, h_j + eps] is covered
    ext = _HALF_PI + step * np.arange(1, int((math.pi - _HALF_PI) / step))
    all_knots = np.concatenate((knots, ext))
    slopes = eps * _integrand(all_knots, beta, sign, pot)
    pieces = eps * _panel_sum(all_knots, _GL_TAB, beta, sign, pot)
    x = np.concatenate(([0.0], np.cumsum(pieces)))
    good = np.isfinite(x) & np.isfinite(slopes) & (slopes > 0)
    bad = np.flatnonzero(~good)
    stop = bad[0] if bad.size else x.size
    x, slopes, all_knots = x[:stop], slopes[:stop], all_knots[:stop]
    i_half = knots.size - 1
    x_half = x[i_half]
    if abs(x_half - 0.5 * ell) > 1e-10 * ell:
        raise QuadratureFailure(
            f"tabulated half-length {x_half!r} disagrees with l/2 = {0.5 * ell!r}"
        )
    target = 0.5 * ell + 2.5 * eps
    last = np.searchsorted(x, target) + 1
    x, slopes, all_knots = x[:last], slopes[:last], all_knots[:last]
    if x[-1] < 0.5 * ell + 1.5 * eps:
        raise QuadratureFailure("standing wave cannot be continued far enough past its zero")
    spline = CubicHermiteSpline(x, all_knots, 1.0 / slopes)
    return spline, float(x[-1])


@lru_cache(maxsize=4096)
def _solve_phi_cached(ell: float, sign: int, pot: DoubleWellPotential, eps: float):
    ratio = ell / eps
    beta = _solve_beta(ratio, sign, pot)
    m = sign * (1.0 - beta)
    alpha = float(pot.near_well(sign, beta))
    spline, reach = _tabulate(beta, sign, pot, ell, eps)
    return StandingWaveSolution(
        ell=ell, eps=eps, sign=sign, m=m, alpha=alpha, beta=beta,
        _w_of_x=spline, reach=reach, _pot=pot,
    )


def solve_phi(ell: float, sign: int, pot: DoubleWellPotential, eps: float,
              min_ratio: float = MIN_LENGTH_RATIO) -> StandingWaveSolution:
    """Standing wave of length ``ell`` near the well ``sign`` (+1 or -1).

    Lengths below ``min_ratio * eps`` are rejected up front; lowering
    ``min_ratio`` is allowed as long as a solution still exists.
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    if not ell / eps >= min_ratio * (1.0 - _RATIO_SLACK):
        raise NoSolution(f"l/eps = {ell / eps:.4g} is below the supported minimum {min_ratio}")
    return _solve_phi_cached(float(ell), int(sign), pot, float(eps))


def _beta_only(ratio: float, sign: int, pot: DoubleWellPotential) -> float:
    return _solve_beta_cached(float(ratio), int(sign), pot)


@lru_cache(maxsize=8192)
def _solve_beta_cached(ratio: float, sign: int, pot: DoubleWellPotential) -> float:
    return _solve_beta(ratio, sign, pot)


def alpha_beta(
    r: float,
    sign: int,
    mode: str,
    pot: DoubleWellPotential,
    r0: float = 0.2,
) -> tuple[float, float]:
    """Interaction coefficients ``(alpha, beta)`` of a gap with ``eps / l = r``.

    ``mode="exact"`` solves the standing wave; ``mode="asymptotic"`` uses
    ``alpha = K^2 A^2 exp(-A/r) / 2`` and ``beta = K exp(-A/(2r))``.
    """
    A, K = pot.well(sign)
    if mode == "exact":
        if not 1.0 / r >= MIN_LENGTH_RATIO * (1.0 - _RATIO_SLACK):
            raise NoSolution(f"exact mode needs 1/r >= {MIN_LENGTH_RATIO}, got r={r}")
        beta = _beta_only(1.0 / r, sign, pot)
        return float(pot.near_well(sign, beta)), beta
    if mode == "asymptotic":
        if not r < r0:
            raise DomainError(f"asymptotic mode needs r < r0 = {r0}, got r={r}")
        return 0.5 * K * K * A * A * math.exp(-A / r), K * math.exp(-0.5 * A / r)
    raise ValueError(f"unknown mode {mode!r}")


class AlphaTable:
    """Exact alpha(l/eps) on one branch, interpolated in log space.

    Solving a standing wave for every right-hand-side evaluation of the layer
    ODEs would be wasteful; ``log alpha`` is very nearly linear in ``l/eps``,
    so a cubic spline through a few hundred exact values reproduces it to
    about 1e-10 relative.
    """

    def __init__(self, pot: DoubleWellPotential, sign: int, lo: float = MIN_LENGTH_RATIO,
                 hi: float = 200.0, n: int = 400):
        self.sign = sign
        self.lo, self.hi = lo, hi
        A, _ = pot.well(sign)
        grid = np.linspace(lo, hi, n)
        log_alpha = np.array([math.log(alpha_beta(1.0 / g, sign, "exact", pot)[0]) for g in grid])
        # remove the dominant linear trend so the spline only sees the correction
        self._A = A
        self._spline = CubicSpline(grid, log_alpha + A * grid)

    def __call__(self, ratio) -> np.ndarray:
        ratio = np.asarray(ratio, dtype=float)
        if np.any(ratio < self.lo) or np.any(ratio > self.hi):
            raise DomainError(f"l/eps outside the tabulated range [{self.lo}, {self.hi}]")
        return np.exp(self._spline(ratio) - self._A * ratio)


def _gap_signs(n_gaps: int) -> np.ndarray:
    # gap j (1-based) sits near the well (-1)**j; gap 1 contains x = 0
    return np.where(np.arange(1, n_gaps + 1) % 2 == 0, 1, -1)


def gap_alphas(h: LayerVector, eps: float, pot: DoubleWellPotential, mode: str = "asymptotic",
               r0: float = 0.2) -> np.ndarray:
    """``alpha^1 .. alpha^{N+2}`` with each gap on the branch of its phase."""
    return np.array([
        alpha_beta(eps / l, int(s), mode, pot, r0=r0)[0]
        for l, s in zip(h.gaps, _gap_signs(h.N + 2))
    ])


def barrier_psi(h: LayerVector, params: ProfileParams, pot: DoubleWellPotential,
                mode: str = "asymptotic", r0: float = 0.2) -> float:
    """``sum_j (alpha^{j+1} - alpha^j)^2`` over j = 1..N+1."""
    h.require_omega(params.eps, params.rho)
    a = gap_alphas(h, params.eps, pot, mode, r0)
    return float(np.sum(np.diff(a) ** 2))


# ---------------------------------------------------------------------------
# u^h


def chi(x) -> np.ndarray:
    """Smooth ramp: 0 for x <= -1, 1 for x >= 1, ``(1 + tanh(3x/(1-x^2)))/2`` between."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    xi = np.where(inside, x, 0.0)
    val = 0.5 * (1.0 + np.tanh(3.0 * xi / (1.0 - xi * xi)))
    return np.where(inside, val, np.where(x >= 1.0, 1.0, 0.0))


def _waves(h: LayerVector, eps: float, pot: DoubleWellPotential,
           min_ratio: float = MIN_LENGTH_RATIO) -> list[StandingWaveSolution]:
    return [solve_phi(l, int(s), pot, eps, min_ratio) for l, s in zip(h.gaps, _gap_signs(h.N + 2))]


def uh_function(h: LayerVector, params: ProfileParams, pot: DoubleWellPotential):
    """Return a vectorised callable ``x -> u^h(x)`` on [0, 1]."""
    h.require_omega(params.eps, params.rho)
    eps = params.eps
    waves = _waves(h, eps, pot, params.min_ratio)
    mids = h.midpoints
    pos = h.h

    def u(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        # I_j = [h_{j-1/2}, h_{j+1/2}] for j = 1..N+1 (0-based index k = j-1)
        idx = np.clip(np.searchsorted(mids, x, side="right") - 1, 0, len(pos) - 1)
        for k in range(len(pos)):
            sel = idx == k
            if not np.any(sel):
                continue
            xs = x[sel]
            c = chi((xs - pos[k]) / eps)
            left = c < 1.0
            right = c > 0.0
            val = np.zeros_like(xs)
            if np.any(left):
                val[left] += (1.0 - c[left]) * waves[k](xs[left] - mids[k])
            if np.any(right):
                val[right] += c[right] * waves[k + 1](xs[right] - mids[k + 1])
            out[sel] = val
        return out

    return u


def build_uh(h: LayerVector, params: ProfileParams, pot: DoubleWellPotential,
             grid: np.ndarray | int) -> Field:
    """Sample the approximate metastable state on ``grid`` (nodes or a node count)."""
    x = uniform_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=float)
    if x[0] != 0.0 or x[-1] != 1.0:
        raise ValidationFailure("grid must cover [0, 1] inclusive")
    if np.max(np.diff(x)) > params.eps / 16.0 * (1 + 1e-12):
        raise ValidationFailure(
            f"grid spacing {np.max(np.diff(x)):.3g} does not resolve eps={params.eps} (need <= eps/16)"
        )
    u = uh_function(h, params, pot)
    return Field(x, u(x))


@dataclass(frozen=True, eq=False)
class ResidualReport:
    field: Field
    sup: float
    l2: float


def _second_difference(u: np.ndarray, dx: float) -> np.ndarray:
    # even reflection across both ends (u_{-1} = u_1, u_{n+1} = u_{n-1})
    padded = np.concatenate(([u[1]], u, [u[-2]]))
    return (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / (dx * dx)


def ac_residual(u: Field, pot: DoubleWellPotential, eps: float) -> ResidualReport:
    """``-eps^2 u_xx + F'(u)`` by centred differences, with sup and L2 norms."""
    dx = float(u.x[1] - u.x[0])
    res = -eps * eps * _second_difference(u.u, dx) + pot.F1(u.u)
    return ResidualReport(
        field=Field(u.x, res),
        sup=float(np.max(np.abs(res))),
        l2=float(math.sqrt(np.trapezoid(res * res, u.x))),
    )


# ---------------------------------------------------------------------------
# mass


_GL_MASS = _gauss(12)


def mass(h: LayerVector, params: ProfileParams, pot: DoubleWellPotential) -> float:
    """``int_0^1 u^h dx``.

    Gauss-Legendre on panels whose edges include every ``h_j +- eps`` (where
    the blend switches on and off) and every gap centre; ``u^h`` is smooth on
    each panel so the rule converges far below 1e-8.
    """
    u = uh_function(h, params, pot)
    eps = params.eps
    breaks = np.concatenate((h.midpoints, h.h - eps, h.h + eps))
    breaks = np.unique(np.clip(breaks, 0.0, 1.0))
    edges = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        k = max(1, int(math.ceil((b - a) / (0.5 * eps))))
        edges.append(np.linspace(a, b, k + 1)[:-1])
    edges.append([1.0])
    edges = np.concatenate(edges)
    nodes, weights = _GL_MASS
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    xs = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    vals = u(xs.ravel()).reshape(xs.shape)
    return float(np.sum(half * (vals @ weights)))


def solve_hN1(xi: Sequence[float], M_target: float, params: ProfileParams,
              pot: DoubleWellPotential, xtol: float = 1e-12) -> float:
    """Last position ``h_{N+1}`` making ``mass(h) = M_target`` given ``h_1..h_N``."""
    xi = np.asarray(xi, dtype=float)
    eps = params.eps
    # the standing waves need l >= 5 eps on top of the Omega_rho constraint
    lo_gap = max(params.threshold, params.min_ratio * eps)
    lo = xi[-1] + lo_gap * (1 + 1e-9)
    hi = 1.0 - 0.5 * lo_gap * (1 + 1e-9)
    if not lo < hi:
        raise NoRoot("no room for the last layer inside Omega_rho")

    def f(last: float) -> float:
        return mass(LayerVector(np.append(xi, last)), params, pot) - M_target

    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise NoRoot(
            f"mass {M_target} not attainable: M ranges over [{min(flo, fhi) + M_target:.6g}, "
            f"{max(flo, fhi) + M_target:.6g}] for admissible h_(N+1)"
        )
    return float(brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps))
