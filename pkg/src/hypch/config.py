"""Run configuration: one TOML file, validated before anything runs."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ValidationFailure
from .layer_ode import OdeParams
from .pde import VELOCITY_MODES, PdeParams, stability_radius
from .potential import DoubleWellPotential, polynomial_potential, quartic_potential
from .profile import LayerVector, ProfileParams

__all__ = ["RunConfig", "apply_overrides", "load_config", "parse_config"]

MODES = ("ode", "pde", "compare", "table", "sweep-tau")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "ode"
    potential: str = "quartic"
    coefficients: tuple[float, ...] = ()
    eps: float = 0.07
    tau: float = 0.0
    rho: float = 0.7
    delta: float | None = None
    h0: tuple[float, ...] = (0.31, 0.66)
    velocity: str = "forward"
    t_end: float = 665.0
    samples: tuple[float, ...] = ()
    rel_tol: float = 1e-10
    abs_tol: float = 1e-13
    method: str = "RK45"
    alpha_mode: str = "asymptotic"
    out: str = "out"
    # pde
    n: int = 1024
    dt: float = 1e-3
    scheme: str = "imex_be"
    stride: int = 1000
    pde_velocity: str = "tangent"
    band: float = 5e-3
    # sweep
    taus: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    t1: float | None = None
    # table
    table_id: int | None = None
    table_tol: float = 0.05

    # -- derived objects -------------------------------------------------

    def make_potential(self) -> DoubleWellPotential:
        if self.potential == "quartic":
            return quartic_potential()
        return polynomial_potential(self.coefficients, name="custom")

    @property
    def N(self) -> int:
        return len(self.h0) - 1

    def ode_params(self, tau: float | None = None) -> OdeParams:
        return OdeParams(eps=self.eps, tau=self.tau if tau is None else tau, rho=self.rho,
                         delta=self.delta, rel_tol=self.rel_tol, abs_tol=self.abs_tol,
                         t_end=self.t_end, method=self.method, alpha_mode=self.alpha_mode)

    def profile_params(self) -> ProfileParams:
        delta = self.delta if self.delta is not None else 0.5 * self.eps / self.rho
        return ProfileParams(eps=self.eps, rho=self.rho, delta=delta, N=self.N)

    def pde_params(self) -> PdeParams:
        return PdeParams(eps=self.eps, tau=self.tau, n=self.n, dt=self.dt, scheme=self.scheme,
                         t_end=self.t_end, stride=self.stride)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- validation ------------------------------------------------------

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ValidationFailure(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.potential not in ("quartic", "custom"):
            raise ValidationFailure("potential must be 'quartic' or 'custom'")
        if self.potential == "custom" and len(self.coefficients) < 3:
            raise ValidationFailure("a custom potential needs its polynomial coefficients")
        if self.mode == "table":
            if self.table_id not in (1, 2, 3, 4):
                raise ValidationFailure("table mode needs table.id in {1, 2, 3, 4}")
            if not self.table_tol > 0:
                raise ValidationFailure("table tolerance must be positive")
            return self
        h = LayerVector(self.h0)
        if not self.eps > 0 or not self.rho > 0:
            raise ValidationFailure("eps and rho must be positive")
        if not h.in_omega(self.eps, self.rho):
            raise ValidationFailure(
                f"h0 is outside Omega_rho: min gap {h.min_gap:.4g} <= eps/rho = {self.eps / self.rho:.4g}")
        self.ode_params()
        if self.velocity not in ("forward", "reversed"):
            raise ValidationFailure("velocity must be 'forward' or 'reversed'")
        if any(s < 0 or s > self.t_end for s in self.samples):
            raise ValidationFailure("sample times must lie in [0, t_end]")
        if self.mode in ("pde", "compare"):
            self.profile_params()
            p = self.pde_params()
            if self.pde_velocity not in VELOCITY_MODES:
                raise ValidationFailure(f"pde velocity must be one of {VELOCITY_MODES}")
            radius = stability_radius(p, self.make_potential())
            if radius > 1.0 + 1e-9:
                raise ValidationFailure(f"dt={self.dt} is unstable for n={self.n} (amplification {radius:.4g})")
        if self.mode == "sweep-tau":
            taus = list(self.taus)
            if not taus or any(t <= 0 for t in taus):
                raise ValidationFailure("sweep taus must be positive")
            if any(b >= a for a, b in zip(taus, taus[1:])):
                raise ValidationFailure("sweep taus must be strictly decreasing")
        return self


_SECTIONS = {
    "params": ("eps", "tau", "rho", "delta"),
    "layers": ("h0", "velocity"),
    "time": ("t_end", "samples"),
    "solver": ("rel_tol", "abs_tol", "method", "alpha_mode"),
    "pde": ("n", "dt", "scheme", "stride", "velocity"),
    "sweep": ("taus", "t1"),
    "compare": ("band",),
    "table": ("id", "tol"),
}
_RENAMES = {("pde", "velocity"): "pde_velocity", ("table", "id"): "table_id",
            ("table", "tol"): "table_tol"}
_TOP = ("mode", "potential", "coefficients", "out")


def _flatten(data: dict[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValidationFailure(f"[{key}] must be a table")
            for sub, v in value.items():
                if sub not in _SECTIONS[key]:
                    raise ValidationFailure(f"unknown key {key}.{sub}")
                flat[_RENAMES.get((key, sub), sub)] = v
        elif key in _TOP:
            flat[key] = value
        else:
            raise ValidationFailure(f"unknown configuration key {key!r}")
    for k in ("coefficients", "h0", "samples", "taus"):
        if k in flat:
            flat[k] = tuple(float(v) for v in flat[k])
    return flat


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationFailure(f"invalid TOML: {exc}") from exc
    try:
        cfg = RunConfig(**_flatten(data))
    except TypeError as exc:
        raise ValidationFailure(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` (or ``key=value``) assignments, values in TOML syntax."""
    updates: dict[str, Any] = {}
    for item in assignments:
        if "=" not in item:
            raise ValidationFailure(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        parts = key.strip().split(".")
        doc: dict[str, Any] = {parts[0]: value} if len(parts) == 1 else {parts[0]: {parts[1]: value}}
        updates.update(_flatten(doc))
    return replace(cfg, **updates)
