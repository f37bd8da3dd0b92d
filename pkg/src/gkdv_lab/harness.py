"""Experiment drivers: perturbed-soliton runs, their stability controls,
parallel sweeps, and report emission.

A run writes a directory of CSV series plus a JSON manifest; the manifest
carries the config snapshot, a content hash, headline metrics, and the halt
reason, so every claim in a report can be traced back to files on disk.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Field, GridSpec, fit_log_slope, h1_norm, inner, l2_norm, quadrature
from .ground_state import GroundState, ground_state
from .evolve import EvolverConfig, Trajectory, evolve
from .modulation import ModulatedTrajectory, modulated_trajectory, tube_distance
from .functionals import (
    WeightConfig,
    functional_K,
    kappa,
    monotonicity_I,
    right_tail_mass,
    select_cutoff_scale,
)

__all__ = [
    "HarnessError",
    "ExperimentConfig",
    "InitialDataChecks",
    "RunManifest",
    "config_to_dict",
    "config_from_dict",
    "instability_config",
    "control_config",
    "make_initial_data",
    "run_instability",
    "run_stability_control",
    "sweep",
    "emit_report",
    "load_manifest",
]

MANIFEST_SCHEMA = "gkdv-lab/run-manifest/v1"

# Numerical tube radius: the decomposition is trusted while the fitted
# distance stays below this, matching the modulation module's precondition.
CONFINEMENT_RADIUS = 0.3

# Box-edge amplitude above which the periodic surrogate stops being a
# faithful window on the line problem (recorded, never a halt).
EDGE_TOL = 1e-10

# Mass outside the rescaled frame's window below which the frame-identity
# comparisons are meaningful.
LEAK_TOL = 1e-10


class HarnessError(RuntimeError):
    """Invalid experiment configuration or corrupted run artifacts."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: nonlinearity, perturbation scale 1/n, and numerics."""

    p: int = 5
    n: int = 10
    grid: GridSpec = GridSpec(100.0, 4096)
    evolver: EvolverConfig = EvolverConfig(p=5, dt=5e-4, t_max=40.0, snapshot_stride=20)
    weights: WeightConfig = WeightConfig()
    alpha0: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool) or self.n < 2:
            raise HarnessError(f"perturbation index n must be an integer >= 2, got {self.n}")
        if not (np.isfinite(self.alpha0) and self.alpha0 > 0):
            raise HarnessError(f"exit threshold alpha0 must be positive, got {self.alpha0}")
        if self.evolver.p != self.p:
            raise HarnessError(
                f"config p = {self.p} disagrees with evolver p = {self.evolver.p}")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise HarnessError(f"seed must be an integer, got {self.seed!r}")


def instability_config(n: int = 10, **overrides) -> ExperimentConfig:
    """Headline perturbed run at the critical power on the production grid."""
    base = dict(
        p=5,
        n=n,
        grid=GridSpec(100.0, 4096),
        evolver=EvolverConfig(p=5, dt=5e-4, t_max=40.0, snapshot_stride=20),
        weights=WeightConfig(),
        alpha0=0.05,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def control_config(n: int = 10, **overrides) -> ExperimentConfig:
    """Subcritical control: same perturbation recipe at p = 3.

    The box is doubled (L = 200) so the soliton, moving at unit speed, stays
    far from the seam through t = 50; dt = 1e-3 keeps the T = 50 run cheap
    while conservation drifts stay orders below the audit tolerances.
    """
    base = dict(
        p=3,
        n=n,
        grid=GridSpec(200.0, 8192),
        evolver=EvolverConfig(p=3, dt=1e-3, t_max=50.0, snapshot_stride=20),
        weights=WeightConfig(),
        alpha0=0.05,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# --------------------------------------------------------------------------
# config (de)serialization

def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    a = d["weights"]["a"]
    if a is not None and math.isinf(a):
        d["weights"]["a"] = "inf"
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    try:
        weights = dict(d["weights"])
        if weights.get("a") == "inf":
            weights["a"] = math.inf
        return ExperimentConfig(
            p=d["p"],
            n=d["n"],
            grid=GridSpec(**d["grid"]),
            evolver=EvolverConfig(**d["evolver"]),
            weights=WeightConfig(**weights),
            alpha0=d["alpha0"],
            seed=d["seed"],
        )
    except (KeyError, TypeError) as exc:
        raise HarnessError(f"malformed experiment config: {exc}") from exc


def _canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    """Content hash of the run's defining inputs."""
    return hashlib.sha256(_canonical_json(config_to_dict(cfg)).encode()).hexdigest()


def run_id_for(cfg: ExperimentConfig) -> str:
    return f"p{cfg.p}-n{cfg.n}-N{cfg.grid.n_points}-{config_hash(cfg)[:10]}"


# --------------------------------------------------------------------------
# initial data

@dataclass(frozen=True)
class InitialDataChecks:
    """Recorded health of the constructed perturbation."""

    r_coefficient: float
    gauge_residual: float        # (eps0, Q^((p+1)/2)), zero by the choice of r
    translation_residual: float  # (eps0, Q_y), zero by parity
    pairing: float               # (eps0, Q)
    eps_l2: float
    eps_h1: float
    b0: float                    # ||eps0||_H1^2 / (eps0, Q), must be < 1
    decay_rate: float            # log-slope of |eps0| on the right flank


def make_initial_data(n: int, gs: GroundState) -> tuple[Field, Field, InitialDataChecks]:
    """Perturbed profile u0 = Q + (Q + r Q^((p+1)/2))/n on the profile grid.

    r is chosen so the perturbation is orthogonal to the scaling gauge
    direction Q^((p+1)/2); by parity it is also orthogonal to Q_y.  The
    construction is rejected when the relative perturbation is too large
    for the smallness bookkeeping (b0 >= 1).
    """
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 2:
        raise HarnessError(f"perturbation index n must be an integer >= 2, got {n}")
    grid = gs.grid
    q = gs.q.values
    exponent = (gs.p + 1) / 2
    low = q ** int(exponent) if exponent == int(exponent) else q ** exponent
    num = quadrature(Field(grid, q * low))
    r = -num / gs.integrals.int_qp1
    eps_vals = (q + r * low) / n
    eps0 = Field(grid, eps_vals)
    u0 = Field(grid, q + eps_vals)

    pairing = inner(eps0, gs.q)
    if pairing <= 0:
        raise HarnessError(f"perturbation pairing (eps0, Q) = {pairing:.3e} is not positive")
    eps_h1 = h1_norm(eps0)
    b0 = eps_h1**2 / pairing
    if b0 >= 1.0:
        raise HarnessError(
            f"perturbation 1/{n} too large: b0 = {b0:.4f} >= 1; increase n")

    y = gs.y
    flank = (y >= 5.0) & (y <= 15.0)
    decay = fit_log_slope(y[flank], np.abs(eps_vals[flank]))
    checks = InitialDataChecks(
        r_coefficient=float(r),
        gauge_residual=float(inner(eps0, Field(grid, low))),
        translation_residual=float(inner(eps0, gs.q_deriv)),
        pairing=float(pairing),
        eps_l2=float(l2_norm(eps0)),
        eps_h1=float(eps_h1),
        b0=float(b0),
        decay_rate=float(decay),
    )
    return u0, eps0, checks


# --------------------------------------------------------------------------
# manifest

@dataclass
class RunManifest:
    schema: str
    run_id: str
    input_hash: str
    config: dict
    halt_reason: str | None
    outputs: dict[str, str]        # logical name -> path relative to the run dir
    checks: dict
    metrics: dict
    timing: dict

    def validate(self, base_dir: str | Path) -> None:
        """Structural audit: files exist, metrics finite-or-null, b0 < 1."""
        base = Path(base_dir)
        for name, rel in self.outputs.items():
            if not (base / rel).is_file():
                raise HarnessError(f"manifest output {name!r} missing: {base / rel}")
        for key, val in self.metrics.items():
            if isinstance(val, (bool, str)) or val is None:
                continue
            if not (isinstance(val, (int, float)) and math.isfinite(val)):
                raise HarnessError(f"metric {key!r} is not finite or null: {val!r}")
        if self.checks:
            b0 = self.checks.get("b0")
            if b0 is None or not (math.isfinite(b0) and b0 < 1.0):
                raise HarnessError(f"recorded b0 must be finite and < 1, got {b0!r}")
            for key in ("gauge_residual", "translation_residual"):
                if key not in self.checks:
                    raise HarnessError(f"initial-data checks missing {key!r}")
        config_from_dict(self.config)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "run_id": self.run_id,
            "input_hash": self.input_hash,
            "config": self.config,
            "halt_reason": self.halt_reason,
            "outputs": self.outputs,
            "checks": self.checks,
            "metrics": self.metrics,
            "timing": self.timing,
        }


_MANIFEST_FIELDS = ("schema", "run_id", "input_hash", "config", "halt_reason",
                    "outputs", "checks", "metrics", "timing")


def _manifest_from_dict(d: dict) -> RunManifest:
    missing = [k for k in _MANIFEST_FIELDS if k not in d]
    if missing:
        raise HarnessError(f"manifest missing fields: {missing}")
    if d["schema"] != MANIFEST_SCHEMA:
        raise HarnessError(f"unsupported manifest schema {d['schema']!r}")
    return RunManifest(**{k: d[k] for k in _MANIFEST_FIELDS})


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        with open(path) as fh:
            return _manifest_from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise HarnessError(f"cannot load manifest {path}: {exc}") from exc


def _save_manifest(man: RunManifest, run_dir: Path) -> Path:
    path = run_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(man.to_dict(), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


# --------------------------------------------------------------------------
# series files

def _write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    cols = [np.asarray(c) for c in columns]
    if cols and any(len(c) != len(cols[0]) for c in cols):
        raise HarnessError("csv columns must share a length")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        if cols:
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise HarnessError(f"empty csv {path}")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def _py(value):
    """Coerce numpy scalars for JSON; non-finite floats become None."""
    if value is None or isinstance(value, (bool, np.bool_)):
        return None if value is None else bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


# --------------------------------------------------------------------------
# run analysis

def _first_time_over(times: np.ndarray, series: np.ndarray, threshold: float):
    idx = np.nonzero(series > threshold)[0]
    return float(times[idx[0]]) if len(idx) else None


def _drift_rate(times: np.ndarray, series: np.ndarray):
    if len(times) < 3 or times[-1] <= times[0]:
        return None
    return float(np.polyfit(times, series, 1)[0])


def _analyze(cfg: ExperimentConfig, gs: GroundState, checks: InitialDataChecks,
             traj: Trajectory) -> tuple[dict, dict, ModulatedTrajectory]:
    times = traj.times
    n_snap = len(traj)
    metrics: dict = {}
    series: dict = {}

    al2 = np.empty(n_snap)
    ah1 = np.empty(n_snap)
    edge = np.empty(n_snap)
    for i, pt in enumerate(traj.points):
        al2[i] = tube_distance(pt.u, gs, norm="l2")[0]
        ah1[i] = tube_distance(pt.u, gs, norm="h1")[0]
        vals = pt.u.values
        edge[i] = max(float(np.max(np.abs(vals[:2]))), float(np.max(np.abs(vals[-2:]))))
    series["tube"] = (("t", "alpha_l2", "alpha_h1", "edge_amp"), (times, al2, ah1, edge))

    mt = modulated_trajectory(traj, gs, eps_stride=1)
    nf = mt.n_fit
    over = np.nonzero(ah1[:nf] > CONFINEMENT_RADIUS)[0]
    i_conf = int(over[0]) if len(over) else nf

    series["modulation"] = (
        ("t", "s", "lam", "x", "eps_l2", "eps_h1", "rate_scale", "rate_shift",
         "mass_shift", "mass_window_leak", "energy_mismatch",
         "residual_neg", "residual_qy"),
        (mt.t_fit, mt.s[:nf], mt.lam[:nf], mt.x[:nf], mt.eps_l2[:nf], mt.eps_h1[:nf],
         mt.rate_scale[:nf], mt.rate_shift[:nf], mt.mass_shift[:nf],
         mt.mass_window_leak[:nf], mt.energy_mismatch[:nf],
         mt.residual_neg[:nf], mt.residual_qy[:nf]))

    metrics["driver"] = "instability" if cfg.p == 5 else "control"
    metrics["t_final"] = _py(times[-1])
    metrics["horizon"] = _py(cfg.evolver.t_max)
    metrics["n_snapshots"] = n_snap
    metrics["n_fit"] = nf
    metrics["confined_snapshots"] = i_conf
    metrics["confined_t_end"] = _py(times[i_conf - 1]) if i_conf else None
    metrics["s_final"] = _py(mt.s[nf - 1])
    metrics["cfl_breach_t"] = _py(traj.cfl_breach_t)
    metrics["fidelity_t"] = _first_time_over(times, edge, EDGE_TOL)
    metrics["edge_amp_max"] = _py(edge.max())

    for key, val in asdict(checks).items():
        metrics[key] = _py(val)

    metrics["alpha_l2_initial"] = _py(al2[0])
    metrics["alpha_l2_max"] = _py(al2.max())
    metrics["alpha_h1_initial"] = _py(ah1[0])
    metrics["alpha_h1_max"] = _py(ah1.max())
    metrics["tube_ratio_max"] = _py(ah1.max() / ah1[0]) if ah1[0] > 0 else None

    exit_l2 = _first_time_over(times, al2, cfg.alpha0)
    exit_h1 = _first_time_over(times, ah1, cfg.alpha0)
    exit_mod = _py(times[nf]) if nf < n_snap else None
    metrics["exit_time_threshold_l2"] = exit_l2
    metrics["exit_time_threshold_h1"] = exit_h1
    metrics["exit_time_modulation"] = exit_mod
    metrics["exit_time_confinement"] = _first_time_over(times, ah1, CONFINEMENT_RADIUS)
    candidates = [(v, r) for v, r in ((exit_h1, "threshold"), (exit_mod, "modulation-failure"))
                  if v is not None]
    if candidates:
        exit_time, exit_reason = min(candidates)
    else:
        exit_time, exit_reason = None, None
    metrics["exit_time"] = exit_time
    metrics["exit_reason"] = exit_reason

    # virial functionals over the fitted window
    if cfg.weights.a is None:
        a_used = select_cutoff_scale(cfg.weights.m, checks.pairing)
        metrics["a_auto"] = True
    else:
        a_used = cfg.weights.a
        metrics["a_auto"] = False
    metrics["a_used"] = _py(a_used)
    metrics["kappa_offset"] = _py(kappa(gs))
    metrics["k_slope_floor"] = _py(0.25 * checks.pairing)

    if nf >= 2:
        k_t, dk_t = functional_K(mt, gs, a_used)
        k_w, dk_w = functional_K(mt, gs, math.inf)
        series["virial"] = (
            ("s", "k_truncated", "k_truncated_slope", "k_whole", "k_whole_slope"),
            (k_t.s, k_t.values, dk_t.values, k_w.values, dk_w.values))
        metrics["a_equals_whole"] = bool(np.array_equal(k_t.values, k_w.values))
        metrics["k_initial"] = _py(k_t.values[0])
        if i_conf >= 2:
            sv = k_t.s[:i_conf]
            for tag, kv in (("k", k_t.values[:i_conf]), ("k_whole", k_w.values[:i_conf])):
                diffs = np.diff(kv)
                slopes = np.gradient(kv, sv)
                metrics[f"{tag}_confined_end"] = _py(kv[-1])
                metrics[f"{tag}_strictly_increasing_confined"] = bool(np.all(diffs > 0))
                metrics[f"{tag}_increment_min_confined"] = _py(diffs.min())
                metrics[f"{tag}_slope_mean_confined"] = _py(np.mean(slopes))
                metrics[f"{tag}_slope_min_confined"] = _py(slopes.min())
    else:
        series["virial"] = (
            ("s", "k_truncated", "k_truncated_slope", "k_whole", "k_whole_slope"),
            tuple(np.empty(0) for _ in range(5)))
        metrics["a_equals_whole"] = None
        metrics["k_initial"] = None
    for key in ("k_confined_end", "k_strictly_increasing_confined",
                "k_increment_min_confined", "k_slope_mean_confined",
                "k_slope_min_confined", "k_whole_confined_end",
                "k_whole_strictly_increasing_confined",
                "k_whole_increment_min_confined", "k_whole_slope_mean_confined",
                "k_whole_slope_min_confined"):
        metrics.setdefault(key, None)

    # conservation drifts on the confined window
    mass = np.array([pt.mass for pt in traj.points])
    energy = np.array([pt.energy for pt in traj.points])
    mean = np.array([pt.mean_integral for pt in traj.points])
    tc = times[:i_conf]
    metrics["mass_drift_rate_confined"] = _drift_rate(tc, mass[:i_conf])
    metrics["energy_drift_rate_confined"] = _drift_rate(tc, energy[:i_conf])
    metrics["mean_drift_rate_confined"] = _drift_rate(tc, mean[:i_conf])

    # frame identities: meaningful while the rescaled window holds the mass
    leak = np.abs(mt.mass_window_leak[:nf])
    intact = np.nonzero(leak <= LEAK_TOL)[0]
    metrics["identity_snapshots"] = int(len(intact))
    if len(intact):
        mass_dev = np.abs(mt.mass_shift[intact] - mt.mass_shift[0])
        e_dev = mt.energy_mismatch[intact]
        e_dev = e_dev[np.isfinite(e_dev)]
        metrics["mass_identity_max"] = _py(mass_dev.max())
        metrics["energy_identity_max"] = _py(e_dev.max()) if len(e_dev) else None
    else:
        metrics["mass_identity_max"] = None
        metrics["energy_identity_max"] = None
    if i_conf:
        metrics["mass_window_leak_max_confined"] = _py(leak[:i_conf].max())
        mass_dev_c = np.abs(mt.mass_shift[:i_conf] - mt.mass_shift[0])
        metrics["mass_identity_max_confined"] = _py(mass_dev_c.max())
    else:
        metrics["mass_window_leak_max_confined"] = None
        metrics["mass_identity_max_confined"] = None

    # modulation-parameter health on the confined window
    if i_conf:
        lam_c = mt.lam[:i_conf]
        metrics["lambda_min_confined"] = _py(lam_c.min())
        metrics["lambda_max_confined"] = _py(lam_c.max())
        metrics["x_nondecreasing_confined"] = bool(np.all(np.diff(mt.x[:i_conf]) >= 0))
        rs = mt.rate_shift[:i_conf]
        rs = rs[np.isfinite(rs)]
        metrics["rate_shift_min_confined"] = _py(rs.min()) if len(rs) else None
        metrics["rate_shift_max_confined"] = _py(rs.max()) if len(rs) else None
        pos = ah1[:i_conf] > 0
        metrics["c1_measured"] = (
            _py(np.max(np.abs(lam_c[pos] - 1.0) / ah1[:i_conf][pos])) if pos.any() else None)
        denom = ah1[:i_conf].max() * abs(checks.pairing) + checks.eps_h1**2
        metrics["c5_measured"] = _py(np.max(mt.eps_h1[:i_conf] ** 2) / denom)
        metrics["residual_neg_max_confined"] = _py(np.max(np.abs(mt.residual_neg[:i_conf])))
        metrics["residual_qy_max_confined"] = _py(np.max(np.abs(mt.residual_qy[:i_conf])))
    else:
        for key in ("lambda_min_confined", "lambda_max_confined",
                    "x_nondecreasing_confined", "rate_shift_min_confined",
                    "rate_shift_max_confined", "c1_measured", "c5_measured",
                    "residual_neg_max_confined", "residual_qy_max_confined"):
            metrics[key] = None
    metrics["lambda_min_fit"] = _py(mt.lam[:nf].min())
    metrics["lambda_max_fit"] = _py(mt.lam[:nf].max())

    # weighted-mass monotonicity audit on the confined window
    x_fit = mt.x[:nf]

    def x_of_t(t: float) -> float:
        return float(np.interp(t, mt.t_fit, x_fit))

    m_scale = cfg.weights.m
    heat_cols = {k: [] for k in ("x0", "t", "t0", "defect", "envelope")}
    theta = None
    if i_conf >= 12:
        i0s = np.unique(np.linspace(10, i_conf - 1, 10).astype(int))
        x0s = np.linspace(2.0, 20.0, 10)
        worst = 0.0
        for i0 in i0s:
            t0 = float(times[i0])
            for it in np.unique(np.linspace(0, i0, 10).astype(int)):
                t = float(times[it])
                for x0 in x0s:
                    wc = WeightConfig(m=m_scale, x0=float(x0))
                    defect = monotonicity_I(traj, x_of_t, wc, t, t0)
                    heat_cols["x0"].append(x0)
                    heat_cols["t"].append(t)
                    heat_cols["t0"].append(t0)
                    heat_cols["defect"].append(defect)
                    heat_cols["envelope"].append(math.exp(-x0 / m_scale))
                    worst = max(worst, defect * math.exp(x0 / m_scale))
        theta = worst
    metrics["theta_monotonicity"] = _py(theta)
    metrics["monotonicity_cells"] = len(heat_cols["x0"])
    series["monotonicity"] = (
        ("x0", "t", "t0", "defect", "envelope"),
        tuple(np.asarray(heat_cols[k]) for k in ("x0", "t", "t0", "defect", "envelope")))

    # right-tail decay audit at the middle of the confined window
    if i_conf >= 1:
        i_mid = i_conf // 2
        x0s_tail = np.linspace(1.0, 6.0, 8)
        pt = traj.points[i_mid]
        center = x_of_t(float(times[i_mid]))
        tails_u = np.array([right_tail_mass(pt.u, center, float(x0)) for x0 in x0s_tail])
        eps_mid = mt.stored.get(i_mid)
        tails_e = np.array([right_tail_mass(eps_mid, 0.0, float(x0)) for x0 in x0s_tail])
        series["tails"] = (("x0", "tail_u", "tail_eps"), (x0s_tail, tails_u, tails_e))
        metrics["tail_audit_t"] = _py(times[i_mid])
        metrics["tail_slope_u"] = _py(fit_log_slope(x0s_tail, tails_u))
        metrics["tail_slope_eps"] = _py(fit_log_slope(x0s_tail, tails_e))
    else:
        series["tails"] = (("x0", "tail_u", "tail_eps"),
                           tuple(np.empty(0) for _ in range(3)))
        metrics["tail_audit_t"] = None
        metrics["tail_slope_u"] = None
        metrics["tail_slope_eps"] = None

    i_prof = max(i_conf - 1, 0)
    series["profiles"] = (
        ("x", "u_initial", "u_confined_end", "u_final"),
        (gs.grid.nodes, traj.points[0].u.values,
         traj.points[i_prof].u.values, traj.points[-1].u.values))

    return metrics, series, mt


def _execute(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    t_start = time.perf_counter()
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    gs = ground_state(cfg.p, 1.0, cfg.grid)
    u0, _eps0, checks = make_initial_data(cfg.n, gs)
    traj = evolve(u0, cfg.evolver)
    metrics, series, _ = _analyze(cfg, gs, checks, traj)

    outputs: dict[str, str] = {}
    for name, (header, columns) in series.items():
        rel = f"{name}.csv"
        _write_csv(run_dir / rel, header, columns)
        outputs[name] = rel

    halt = traj.halt_reason if traj.halt_reason is not None else None
    man = RunManifest(
        schema=MANIFEST_SCHEMA,
        run_id=run_id_for(cfg),
        input_hash=config_hash(cfg),
        config=config_to_dict(cfg),
        halt_reason=halt,
        outputs=outputs,
        checks={k: _py(v) for k, v in asdict(checks).items()},
        metrics=metrics,
        timing={"elapsed_seconds": time.perf_counter() - t_start},
    )
    _save_manifest(man, run_dir)
    man.validate(run_dir)
    return man


def run_instability(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    """Critical-power run: evolve the perturbed soliton, decompose, and
    record the growth functionals and the exit diagnostics."""
    if cfg.p != 5:
        raise HarnessError(f"instability driver requires p = 5, got p = {cfg.p}")
    return _execute(cfg, out_dir)


def run_stability_control(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    """Subcritical control run; the same pipeline, confinement expected."""
    if cfg.p != 3:
        raise HarnessError(f"stability control requires p = 3, got p = {cfg.p}")
    return _execute(cfg, out_dir)


# --------------------------------------------------------------------------
# sweeps

def _driver_for(cfg: ExperimentConfig) -> Callable[[ExperimentConfig, Path], RunManifest]:
    if cfg.p == 5:
        return run_instability
    if cfg.p == 3:
        return run_stability_control
    raise HarnessError(f"no experiment driver for p = {cfg.p}")


def _failure_manifest(cfg_dict: dict, run_dir: Path, exc: Exception) -> RunManifest:
    try:
        cfg = config_from_dict(cfg_dict)
        run_id, digest = run_id_for(cfg), config_hash(cfg)
    except HarnessError:
        digest = hashlib.sha256(_canonical_json(cfg_dict).encode()).hexdigest()
        run_id = f"invalid-{digest[:10]}"
    man = RunManifest(
        schema=MANIFEST_SCHEMA,
        run_id=run_id,
        input_hash=digest,
        config=cfg_dict,
        halt_reason=f"error: {type(exc).__name__}: {exc}",
        outputs={},
        checks={},
        metrics={"failed": True},
        timing={"elapsed_seconds": 0.0},
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    _save_manifest(man, run_dir)
    return man


def _sweep_task(args: tuple[dict, str]) -> dict:
    cfg_dict, dir_str = args
    run_dir = Path(dir_str)
    try:
        cfg = config_from_dict(cfg_dict)
        man = _driver_for(cfg)(cfg, run_dir)
    except Exception as exc:  # isolated per run
        man = _failure_manifest(cfg_dict, run_dir, exc)
    return man.to_dict()


_SUMMARY_COLUMNS = (
    "run_id", "driver", "p", "n", "n_points", "pairing", "b0",
    "alpha_h1_initial", "alpha_h1_max", "tube_ratio_max",
    "exit_time", "exit_time_confinement",
    "k_slope_mean_confined", "k_slope_floor", "k_strictly_increasing_confined",
    "mass_drift_rate_confined", "energy_drift_rate_confined",
    "theta_monotonicity", "halt_reason",
)


def _summary_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value).replace(",", ";")


def _summary_row(man: RunManifest) -> list[str]:
    merged = {
        "run_id": man.run_id,
        "driver": man.metrics.get("driver"),
        "p": man.config.get("p"),
        "n": man.config.get("n"),
        "n_points": (man.config.get("grid") or {}).get("n_points"),
        "halt_reason": man.halt_reason,
    }
    row = []
    for col in _SUMMARY_COLUMNS:
        if col in merged:
            row.append(_summary_cell(merged[col]))
        else:
            row.append(_summary_cell(man.metrics.get(col)))
    return row


def _write_summary(manifests: Sequence[RunManifest], path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_SUMMARY_COLUMNS) + "\n")
        for man in manifests:
            fh.write(",".join(_summary_row(man)) + "\n")


def sweep(configs: Sequence[ExperimentConfig], out_dir: str | Path,
          workers: int = 1) -> list[RunManifest]:
    """Run independent experiments, each into its own subdirectory.

    GKDV_LAB_THREADS caps the worker count.  Results keep the input order;
    a failing run yields a manifest with the error as its halt reason
    rather than aborting the sweep.
    """
    if not configs:
        raise HarnessError("sweep needs at least one config")
    if workers < 1:
        raise HarnessError(f"workers must be >= 1, got {workers}")
    cap = os.environ.get("GKDV_LAB_THREADS")
    if cap is not None:
        try:
            workers = max(1, min(workers, int(cap)))
        except ValueError as exc:
            raise HarnessError(f"GKDV_LAB_THREADS must be an integer, got {cap!r}") from exc

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for i, cfg in enumerate(configs):
        run_dir = out / f"run{i:02d}-{run_id_for(cfg)}"
        tasks.append((config_to_dict(cfg), str(run_dir)))

    if workers == 1 or len(tasks) == 1:
        results = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_sweep_task, tasks))

    manifests = [_manifest_from_dict(d) for d in results]
    _write_summary(manifests, out / "summary.csv")
    return manifests


# --------------------------------------------------------------------------
# reports

def emit_report(manifest_paths: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    """Collect run directories into one report: a summary table plus
    plot-ready copies of the tube, virial, and monotonicity series.

    Each manifest is validated against its directory, and the copied series
    are checked for header shape and row counts consistent with the
    manifest's own metrics.
    """
    if not manifest_paths:
        raise HarnessError("emit_report needs at least one manifest")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    manifests: list[RunManifest] = []

    for i, item in enumerate(manifest_paths):
        path = Path(item)
        base = path if path.is_dir() else path.parent
        man = load_manifest(path)
        man.validate(base)
        manifests.append(man)
        expected_rows = {
            "tube": man.metrics.get("n_snapshots"),
            "virial": man.metrics.get("n_fit"),
            "modulation": man.metrics.get("n_fit"),
            "monotonicity": man.metrics.get("monotonicity_cells"),
        }
        for name in ("tube", "virial", "monotonicity"):
            rel = man.outputs.get(name)
            if rel is None:
                continue
            header, rows = _read_csv(base / rel)
            want = expected_rows.get(name)
            if want is not None and len(rows) != want:
                raise HarnessError(
                    f"{man.run_id}: {name} series has {len(rows)} rows, expected {want}")
            if any(len(r) != len(header) for r in rows):
                raise HarnessError(f"{man.run_id}: ragged rows in {name} series")
            dest = out / f"run{i:02d}-{man.run_id}-{name}.csv"
            dest.write_bytes((base / rel).read_bytes())
            written.append(dest)

    summary = out / "summary.csv"
    _write_summary(manifests, summary)
    written.append(summary)
    return written
