"""Command-line entry points for profiles, spectra, evolution runs,
decompositions, functional series, and the experiment drivers."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .grid import Field, GridSpec
from .ground_state import ground_state
from .linop import LinearizedOperator, spectrum_of_L
from .evolve import EvolverConfig, Trajectory, TrajectoryPoint, conserved_quantities, evolve
from .modulation import modulated_trajectory
from .functionals import WeightConfig, functional_K, monotonicity_I, virial_J
from .harness import (
    HarnessError,
    config_from_dict,
    control_config,
    emit_report,
    instability_config,
    make_initial_data,
    run_instability,
    run_stability_control,
    sweep,
)

TRAJECTORY_FORMAT = "gkdv-lab/trajectory/v1"


class CliError(RuntimeError):
    pass


def _write_csv(path: Path, header, columns) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _csv_base(out: str) -> Path:
    """Output stem: `foo` and `foo.csv` both mean foo.csv plus foo.*.json."""
    path = Path(out)
    return path.with_suffix("") if path.suffix == ".csv" else path


def _grid_from_args(args) -> GridSpec:
    return GridSpec(args.length, args.grid_n)


def _parse_cutoff(text: str):
    if text == "auto":
        return None
    if text == "inf":
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise CliError(f"--A expects 'auto', 'inf', or a number, got {text!r}")


# --------------------------------------------------------------------------
# profile and spectrum

def _cmd_groundstate(args) -> int:
    grid = _grid_from_args(args)
    gs = ground_state(args.p, args.c, grid)
    base = _csv_base(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(base.with_suffix(".csv"),
               ("x", "Q", "Q_y", "LambdaQ", "F"),
               (grid.nodes, gs.q.values, gs.q_deriv.values,
                gs.lambda_q.values, gs.f_primitive.values))
    record = {
        "p": gs.p,
        "c": gs.c,
        "decay_rate": gs.decay_rate,
        "residual": gs.residual,
        "integrals": {
            "int_q": gs.integrals.int_q,
            "int_q2": gs.integrals.int_q2,
            "int_q4": gs.integrals.int_q4,
            "int_q6": gs.integrals.int_q6,
            "int_qy2": gs.integrals.int_qy2,
            "int_qp1": gs.integrals.int_qp1,
            "energy": gs.integrals.energy,
        },
    }
    with open(base.with_name(base.name + ".integrals.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"profile written to {base.with_suffix('.csv')}")
    print(f"residual {gs.residual:.3e}  int Q^2 {gs.integrals.int_q2:.12f}")
    return 0


def _cmd_spectrum(args) -> int:
    grid = _grid_from_args(args)
    gs = ground_state(args.p, 1.0, grid)
    pairs = spectrum_of_L(LinearizedOperator(gs), args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["x"] + [f"phi{i}" for i in range(args.k)]
    cols = [grid.nodes] + [phi.values for phi in pairs.functions]
    _write_csv(out / "eigenfunctions.csv", header, cols)
    for i, (lam, res) in enumerate(zip(pairs.values, pairs.residuals)):
        print(f"lambda_{i} = {lam:.12f}  (residual {res:.2e})")
    return 0


# --------------------------------------------------------------------------
# trajectory store

def _save_trajectory(traj: Trajectory, grid: GridSpec, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, pt in enumerate(traj.points):
        name = f"snap{i:05d}.csv"
        _write_csv(out / name, ("x", "u"), (grid.nodes, pt.u.values))
        files.append(name)
    times = [pt.t for pt in traj.points]
    mass = np.array([pt.mass for pt in traj.points])
    energy = np.array([pt.energy for pt in traj.points])
    mean = np.array([pt.mean_integral for pt in traj.points])
    span = max(times[-1] - times[0], 1e-300)
    manifest = {
        "format": TRAJECTORY_FORMAT,
        "grid": {"length": grid.length, "n_points": grid.n_points,
                 "origin_offset": grid.origin_offset},
        "config": {
            "p": traj.config.p, "dt": traj.config.dt,
            "t_max": traj.config.t_max,
            "snapshot_stride": traj.config.snapshot_stride,
            "dealias": traj.config.dealias,
            "resolution_guard": traj.config.resolution_guard,
        },
        "times": times,
        "files": files,
        "halt_reason": traj.halt_reason,
        "cfl_breach_t": traj.cfl_breach_t,
        "conservation": {
            "mass_drift_rate": float((mass[-1] - mass[0]) / span),
            "energy_drift_rate": float((energy[-1] - energy[0]) / span),
            "mean_drift_rate": float((mean[-1] - mean[0]) / span),
            "mass_dev_max": float(np.max(np.abs(mass - mass[0]))),
            "energy_dev_max": float(np.max(np.abs(energy - energy[0]))),
        },
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _load_trajectory(traj_dir: str | Path) -> tuple[Trajectory, GridSpec]:
    root = Path(traj_dir)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read trajectory manifest in {root}: {exc}")
    if manifest.get("format") != TRAJECTORY_FORMAT:
        raise CliError(f"{root} is not a trajectory directory")
    grid = GridSpec(**manifest["grid"])
    cfg = EvolverConfig(**manifest["config"])
    points = []
    for t, name in zip(manifest["times"], manifest["files"]):
        data = np.genfromtxt(root / name, delimiter=",", names=True)
        u = Field(grid, np.ascontiguousarray(data["u"]))
        mass, energy, mean = conserved_quantities(u, cfg.p)
        points.append(TrajectoryPoint(t=t, u=u, mass=mass, energy=energy,
                                      mean_integral=mean))
    return Trajectory(points=points, halt_reason=manifest["halt_reason"],
                      config=cfg, cfl_breach_t=manifest["cfl_breach_t"]), grid


def _cmd_evolve(args) -> int:
    grid = _grid_from_args(args)
    if args.init == "soliton":
        gs = ground_state(args.p, 1.0, grid)
        u0 = gs.q
    elif args.init.startswith("perturbed-n"):
        try:
            n = int(args.init.removeprefix("perturbed-n"))
        except ValueError:
            raise CliError(f"bad builtin initial state {args.init!r}")
        gs = ground_state(args.p, 1.0, grid)
        u0, _, _ = make_initial_data(n, gs)
    else:
        path = Path(args.init)
        if not path.is_file():
            raise CliError(
                f"--init expects 'soliton', 'perturbed-n<k>', or a csv path, "
                f"got {args.init!r}")
        data = np.genfromtxt(path, delimiter=",", names=True)
        if "u" not in (data.dtype.names or ()):
            raise CliError(f"{path} needs columns x, u")
        if len(data["u"]) != grid.n_points:
            raise CliError(
                f"{path} has {len(data['u'])} samples, grid wants {grid.n_points}")
        u0 = Field(grid, np.ascontiguousarray(data["u"]))
    cfg = EvolverConfig(p=args.p, dt=args.dt, t_max=args.tmax,
                        snapshot_stride=args.stride)
    traj = evolve(u0, cfg)
    _save_trajectory(traj, grid, Path(args.out))
    print(f"{len(traj)} snapshots to t = {traj.points[-1].t:g} "
          f"(halt: {traj.halt_reason})")
    return 0


# --------------------------------------------------------------------------
# decomposition and functionals over a stored trajectory

def _cmd_modulate(args) -> int:
    traj, grid = _load_trajectory(args.traj)
    gs = ground_state(traj.config.p, 1.0, grid)
    mt = modulated_trajectory(traj, gs)
    nf = mt.n_fit
    base = _csv_base(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(base.with_suffix(".csv"),
               ("t", "s", "lambda", "x", "eps_l2", "eps_h1",
                "dlam", "dx", "resQ3", "resQy"),
               (mt.t_fit, mt.s[:nf], mt.lam[:nf], mt.x[:nf],
                mt.eps_l2[:nf], mt.eps_h1[:nf],
                mt.rate_scale[:nf], mt.rate_shift[:nf],
                mt.residual_neg[:nf], mt.residual_qy[:nf]))
    print(f"fitted {nf}/{len(traj)} snapshots"
          + (f" (stopped: {mt.fit_failure})" if mt.fit_failure else ""))
    return 0


def _cmd_functionals(args) -> int:
    traj, grid = _load_trajectory(args.traj)
    gs = ground_state(traj.config.p, 1.0, grid)
    a = _parse_cutoff(args.A)
    if a is None:
        raise CliError("--A expects 'inf' or a number here")
    mt = modulated_trajectory(traj, gs)
    nf = mt.n_fit
    if nf < 2:
        raise CliError("trajectory has fewer than two fitted snapshots")
    k_trunc, dk_trunc = functional_K(mt, gs, a)
    k_whole, _ = functional_K(mt, gs, math.inf)
    offset = 0.25 * gs.integrals.int_q**2
    j_trunc = k_trunc.values / np.sqrt(mt.lam[:nf]) + offset
    j_whole = k_whole.values / np.sqrt(mt.lam[:nf]) + offset
    base = _csv_base(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(base.with_suffix(".csv"),
               ("s", "J", "J_A", "K", "K_A", "dKds"),
               (k_trunc.s, j_whole, j_trunc, k_whole.values, k_trunc.values,
                dk_trunc.values))

    x_fit = mt.x[:nf]
    times = traj.times

    def x_of_t(t: float) -> float:
        return float(np.interp(t, mt.t_fit, x_fit))

    checks = {"m": args.M, "envelope_rate": -1.0 / args.M, "cells": 0,
              "theta": None}
    if nf >= 12:
        theta = 0.0
        cells = 0
        for i0 in np.unique(np.linspace(10, nf - 1, 8).astype(int)):
            for it in np.unique(np.linspace(0, i0, 8).astype(int)):
                for x0 in np.linspace(2.0, 20.0, 8):
                    wc = WeightConfig(m=args.M, x0=float(x0))
                    d = monotonicity_I(traj, x_of_t, wc,
                                       float(times[it]), float(times[i0]))
                    theta = max(theta, d * math.exp(x0 / args.M))
                    cells += 1
        checks.update(theta=theta, cells=cells)
    with open(base.with_name(base.name + ".checks.json"), "w") as fh:
        json.dump(checks, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"series written to {base.with_suffix('.csv')}; "
          f"theta = {checks['theta']}")
    return 0


# --------------------------------------------------------------------------
# experiment drivers

def _experiment_overrides(args, factory, n):
    kwargs = {}
    if args.grid_n is not None or args.length is not None:
        probe = factory(n)
        length = args.length if args.length is not None else probe.grid.length
        grid_n = args.grid_n if args.grid_n is not None else probe.grid.n_points
        kwargs["grid"] = GridSpec(length, grid_n)
    if args.tmax is not None or args.dt is not None:
        probe = factory(n)
        ev = probe.evolver
        kwargs["evolver"] = EvolverConfig(
            p=ev.p,
            dt=args.dt if args.dt is not None else ev.dt,
            t_max=args.tmax if args.tmax is not None else ev.t_max,
            snapshot_stride=ev.snapshot_stride,
            dealias=ev.dealias,
            resolution_guard=ev.resolution_guard,
        )
    return kwargs


def _print_headline(man) -> None:
    m = man.metrics
    print(f"run {man.run_id}: halt={man.halt_reason}")
    for key in ("exit_time", "exit_reason", "exit_time_confinement",
                "tube_ratio_max", "k_slope_mean_confined", "k_slope_floor",
                "k_strictly_increasing_confined", "a_used"):
        print(f"  {key} = {m.get(key)}")


def _cmd_instability(args) -> int:
    a = _parse_cutoff(args.A)
    kwargs = _experiment_overrides(args, instability_config, args.n)
    kwargs["weights"] = WeightConfig(a=a)
    kwargs["alpha0"] = args.alpha0
    cfg = instability_config(args.n, **kwargs)
    man = run_instability(cfg, args.out)
    _print_headline(man)
    return 0


def _cmd_control(args) -> int:
    if args.p != 3:
        raise CliError(f"control runs at p = 3, got --p {args.p}")
    kwargs = _experiment_overrides(args, control_config, args.n)
    cfg = control_config(args.n, **kwargs)
    man = run_stability_control(cfg, args.out)
    _print_headline(man)
    return 0


def _cmd_sweep(args) -> int:
    path = Path(args.config)
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read sweep config {path}: {exc}")
    if isinstance(payload, dict):
        payload = payload.get("configs")
    if not isinstance(payload, list) or not payload:
        raise CliError(
            "sweep config must be a json list of experiment configs "
            "(or {'configs': [...]})")
    configs = [config_from_dict(d) for d in payload]
    manifests = sweep(configs, args.out, workers=args.workers)
    failures = sum(1 for m in manifests
                   if m.halt_reason and m.halt_reason.startswith("error:"))
    print(f"{len(manifests)} runs into {args.out} ({failures} failed); "
          f"summary.csv written")
    return 0


def _cmd_report(args) -> int:
    root = Path(args.in_dir)
    if (root / "manifest.json").is_file():
        run_dirs = [root]
    else:
        run_dirs = sorted(p for p in root.iterdir()
                          if p.is_dir() and (p / "manifest.json").is_file())
    if not run_dirs:
        raise CliError(f"no run manifests under {root}")
    written = emit_report(run_dirs, args.out)
    print(f"{len(written)} report files in {args.out}")
    return 0


# --------------------------------------------------------------------------
# parser

def _add_grid_options(sub, length=100.0, grid_n=1024) -> None:
    sub.add_argument("--length", type=float, default=length,
                     help=f"box length (default {length})")
    sub.add_argument("--grid-n", type=int, default=grid_n,
                     help=f"grid points, a power of two (default {grid_n})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gkdv-lab",
        description="Numerical laboratory for critical gKdV soliton dynamics.")
    subs = parser.add_subparsers(dest="command", required=True)

    gsub = subs.add_parser("groundstate", help="solve for the soliton profile")
    gsub.add_argument("--p", type=int, required=True)
    gsub.add_argument("--c", type=float, default=1.0)
    gsub.add_argument("--out", required=True,
                      help="csv path; integrals land next to it as *.integrals.json")
    _add_grid_options(gsub)
    gsub.set_defaults(func=_cmd_groundstate)

    ssub = subs.add_parser("spectrum", help="lowest eigenpairs of the linearization")
    ssub.add_argument("--k", type=int, required=True, help="number of eigenpairs")
    ssub.add_argument("--p", type=int, default=5)
    ssub.add_argument("--out", default=".", help="directory for eigenfunctions.csv")
    _add_grid_options(ssub)
    ssub.set_defaults(func=_cmd_spectrum)

    esub = subs.add_parser("evolve", help="time-step an initial state")
    esub.add_argument("--p", type=int, required=True)
    esub.add_argument("--init", required=True,
                      help="'soliton', 'perturbed-n<k>', or a csv with columns x,u")
    esub.add_argument("--tmax", type=float, required=True)
    esub.add_argument("--dt", type=float, required=True)
    esub.add_argument("--stride", type=int, default=20,
                      help="steps between snapshots (default 20)")
    esub.add_argument("--out", required=True, help="trajectory directory")
    _add_grid_options(esub)
    esub.set_defaults(func=_cmd_evolve)

    msub = subs.add_parser("modulate", help="decompose a stored trajectory")
    msub.add_argument("--traj", required=True, help="trajectory directory")
    msub.add_argument("--out", required=True, help="csv path for the fit series")
    msub.set_defaults(func=_cmd_modulate)

    fsub = subs.add_parser("functionals",
                           help="virial series and weighted-mass checks")
    fsub.add_argument("--traj", required=True, help="trajectory directory")
    fsub.add_argument("--A", required=True, help="cutoff scale: a number or 'inf'")
    fsub.add_argument("--M", type=float, default=4.0, help="weight scale (default 4)")
    fsub.add_argument("--out", required=True,
                      help="csv path; checks land next to it as *.checks.json")
    fsub.set_defaults(func=_cmd_functionals)

    isub = subs.add_parser("instability", help="perturbed critical-power experiment")
    isub.add_argument("--n", type=int, required=True, help="perturbation scale 1/n")
    isub.add_argument("--A", default="auto",
                      help="cutoff scale: 'auto', 'inf', or a number (default auto)")
    isub.add_argument("--alpha0", type=float, default=0.05,
                      help="exit threshold (default 0.05)")
    isub.add_argument("--out", required=True, help="run directory")
    isub.add_argument("--tmax", type=float, default=None,
                      help="override the default horizon")
    isub.add_argument("--dt", type=float, default=None)
    isub.add_argument("--length", type=float, default=None)
    isub.add_argument("--grid-n", type=int, default=None)
    isub.set_defaults(func=_cmd_instability)

    csub = subs.add_parser("control", help="subcritical stability control")
    csub.add_argument("--p", type=int, required=True, help="must be 3")
    csub.add_argument("--n", type=int, required=True)
    csub.add_argument("--out", required=True, help="run directory")
    csub.add_argument("--tmax", type=float, default=None)
    csub.add_argument("--dt", type=float, default=None)
    csub.add_argument("--length", type=float, default=None)
    csub.add_argument("--grid-n", type=int, default=None)
    csub.set_defaults(func=_cmd_control)

    wsub = subs.add_parser("sweep", help="run many experiments in parallel")
    wsub.add_argument("--config", required=True,
                      help="json file: list of experiment configs")
    wsub.add_argument("--workers", type=int, default=1)
    wsub.add_argument("--out", required=True, help="sweep output directory")
    wsub.set_defaults(func=_cmd_sweep)

    rsub = subs.add_parser("report", help="summarize finished runs")
    rsub.add_argument("--in", dest="in_dir", required=True,
                      help="a run directory or a directory of runs")
    rsub.add_argument("--out", required=True, help="report directory")
    rsub.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
