"""Command line entry point: ``hypch <subcommand> [--config FILE] [--out DIR]``.

Exit codes: 0 on success, 2 when a tolerance check fails, 1 on any other
error (invalid configuration, solver failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, load_config
from .errors import HypchError, ToleranceFailure
from .harness import (
    SnapshotWriter,
    compare_pde_ode,
    figure1_series,
    run_table,
    sweep_tau,
    write_manifest,
)
from .layer_ode import initial_velocities, integrate
from .pde import integrate_pde

log = logging.getLogger("hypch")

_MODE_OF = {"run-ode": "ode", "run-pde": "pde", "compare": "compare",
            "reproduce-table": "table", "sweep-tau": "sweep-tau"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _MODE_OF:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--tol-override", type=float, help="replace the pass/fail tolerance")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration key (TOML value syntax)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "reproduce-table":
            p.add_argument("--id", type=int, required=True, choices=(1, 2, 3, 4))
            p.add_argument("--workers", type=int, default=1, help="processes for the tau rows")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args.set)
    cfg = replace(cfg, mode=_MODE_OF[args.command])
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    if args.command == "reproduce-table":
        cfg = replace(cfg, table_id=args.id)
    if args.tol_override is not None:
        key = "band" if args.command == "compare" else "table_tol"
        cfg = replace(cfg, **{key: args.tol_override})
    return cfg.validate()


def _cmd_run_ode(cfg: RunConfig, out: Path) -> list[Path]:
    pot = cfg.make_potential()
    params = cfg.ode_params()
    samples = cfg.samples or None
    if cfg.tau > 0:
        eta0 = initial_velocities(cfg.h0, cfg.velocity, params, pot)
        traj = integrate("hyperbolic", cfg.h0, params, pot, eta0=eta0, t_eval=samples)
    else:
        traj = integrate("classic", cfg.h0, params, pot, t_eval=samples)
    path = out / "trajectory.csv"
    traj.to_csv(path)
    log.info("stopped at t=%g (%s)", traj.t[-1], traj.reason)
    print(f"run-ode: {traj.reason} at t={traj.t[-1]:g}; {traj.t.size} samples -> {path}")
    return [path]


def _cmd_run_pde(cfg: RunConfig, out: Path) -> list[Path]:
    pot = cfg.make_potential()
    params, profile = cfg.pde_params(), cfg.profile_params()
    writer = SnapshotWriter(out / "snapshots")
    try:
        run = integrate_pde(params, pot, h0=cfg.h0, profile=profile, mode=cfg.pde_velocity,
                            on_snapshot=writer, keep_snapshots=False)
    finally:
        writer.close()
    layers = out / "layers.csv"
    with open(layers, "w") as fh:
        K = max(len(h) for h in run.layer_h) if run.layer_h else 0
        fh.write(",".join(["t"] + [f"h{i}" for i in range(1, K + 1)]) + "\n")
        for t, h in zip(run.layer_t, run.layer_h):
            fh.write(",".join(repr(float(v)) for v in (t, *h)) + "\n")
    index = out / "snapshots" / "index.json"
    index.write_text(json.dumps(writer.index, indent=1) + "\n")
    print(f"run-pde: {len(writer.index)} snapshots, max mass drift {run.max_mass_drift:.3e} -> {out}")
    return [layers, index]


def _cmd_compare(cfg: RunConfig, out: Path) -> list[Path]:
    pot = cfg.make_potential()
    rep = compare_pde_ode(cfg.h0, cfg.pde_params(), cfg.ode_params(), cfg.profile_params(), pot,
                          mode=cfg.pde_velocity, band=cfg.band)
    path = out / "compare.csv"
    rep.to_csv(path)
    bad = rep.sign_mismatches()
    print(f"compare: sup gap {rep.sup_gap():.3e} (band {rep.band:.1e}), terminal gap {rep.terminal_gap():.3e}, "
          f"sign mismatches at {bad.size} sample times, mass drift {rep.max_mass_drift:.2e}")
    if not rep.passed:
        exc = ToleranceFailure("PDE and reduced trajectories disagree beyond the band")
        exc.outputs = [path]
        raise exc
    return [path]


def _cmd_table(cfg: RunConfig, out: Path, workers: int) -> list[Path]:
    rep = run_table(cfg.table_id, cfg.table_tol, workers=workers)
    path = out / f"table{cfg.table_id}.csv"
    rep.to_csv(path)
    paths = [path]
    if cfg.table_id == 1:
        paths += figure1_series(out)
    print(rep.summary())
    if not rep.passed:
        lines = [f"tau={r['tau']:g} layer {r['layer']} t={r['t']:g}: computed {r['computed']:.4e} "
                 f"vs {r['reference']:.4e} ({r['rel_err']:.2%})" for r in rep.failures]
        exc = ToleranceFailure(rep.summary(), failures=lines, report=rep)
        exc.outputs = paths
        raise exc
    return paths


def _cmd_sweep(cfg: RunConfig, out: Path) -> list[Path]:
    pot = cfg.make_potential()
    rep = sweep_tau(cfg.h0, cfg.taus, cfg.t_end, cfg.ode_params(tau=0.0), pot, t1=cfg.t1)
    path = out / "sweep_tau.csv"
    rep.to_csv(path)
    slope = "n/a (single tau)" if np.isnan(rep.slope) else f"{rep.slope:.3f}"
    print(f"sweep-tau: fitted slope of log sup|h - h_c| vs log tau: {slope}")
    return [path]


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    outputs: list[Path] = []
    status = 0
    try:
        cfg = _config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        try:
            if args.command == "run-ode":
                outputs = _cmd_run_ode(cfg, out)
            elif args.command == "run-pde":
                outputs = _cmd_run_pde(cfg, out)
            elif args.command == "compare":
                outputs = _cmd_compare(cfg, out)
            elif args.command == "reproduce-table":
                outputs = _cmd_table(cfg, out, args.workers)
            else:
                outputs = _cmd_sweep(cfg, out)
        except ToleranceFailure as exc:
            print(f"FAIL: {exc}", file=sys.stderr)
            for line in exc.failures:
                print(f"  {line}", file=sys.stderr)
            status = 2
            outputs = getattr(exc, "outputs", outputs)
        write_manifest(out, command=args.command, config=cfg.to_dict(), digest=cfg.digest(),
                       outputs=outputs, extra={"exit_status": status})
    except HypchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
