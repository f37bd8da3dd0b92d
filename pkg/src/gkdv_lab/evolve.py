"""Pseudo-spectral time evolution of u_t + u_xxx + (u^p)_x = 0.

On the transform side the equation reads v_t = i k^3 v - i k F[u^p]; the
dispersive part is integrated exactly and the nonlinear part with a
fourth-order exponential Runge-Kutta scheme (Cox-Matthews coefficients,
evaluated by averaging over a 32-point circular contour around each
dt * i k^3 so the small-|z| cancellations never surface).  The top third of
the spectrum is zeroed before and after every nonlinear product.

The flow conserves mass, energy, and the mean; drift in those functionals is
the solver's honesty meter and is recorded on every snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from gkdv_lab.grid import Field, GridSpec, spectral_derivative


class EvolveError(ValueError):
    """Rejected configuration or initial data."""


@dataclass(frozen=True)
class EvolverConfig:
    """Time-stepping parameters.

    resolution_guard halts the run once the relative spectral energy in the
    top quarter of the kept band exceeds the given fraction (None disables);
    the run is then flagged rather than silently aliased.
    """

    p: int = 5
    dt: float = 5e-4
    t_max: float = 10.0
    snapshot_stride: int = 20
    dealias: bool = True
    resolution_guard: float | None = 1e-8

    def __post_init__(self) -> None:
        if not isinstance(self.p, (int, np.integer)) or self.p < 2:
            raise EvolveError(f"power p must be an integer >= 2, got {self.p}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise EvolveError(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.t_max) and self.t_max >= 0):
            raise EvolveError(f"t_max must be nonnegative, got {self.t_max}")
        if self.snapshot_stride < 1:
            raise EvolveError("snapshot_stride must be >= 1")


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    u: Field
    mass: float
    energy: float
    mean_integral: float


@dataclass
class Trajectory:
    """Snapshot sequence plus the reason the run stopped early, if any."""

    points: list[TrajectoryPoint]
    halt_reason: str | None
    config: EvolverConfig
    cfl_breach_t: float | None = None  # first time the advective ceiling broke

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def __iter__(self):
        return iter(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([pt.t for pt in self.points])


def stability_ceiling(grid: GridSpec, p: int, u_vals: np.ndarray) -> float:
    """Advective time-step ceiling 0.5 / (k_max * sup|u|^(p-1))."""
    amp = float(np.max(np.abs(u_vals))) ** (p - 1)
    return 0.5 / (grid.max_wavenumber * max(1.0, amp))


class _Stepper:
    """Precomputed exponential integrator for one (grid, p, dt) combination."""

    def __init__(self, grid: GridSpec, p: int, dt: float, dealias: bool):
        self.grid = grid
        self.p = p
        self.dt = dt
        n = grid.n_points
        k = grid.wavenumbers
        ik = 1j * k
        ik[-1] = 0.0  # odd-derivative Nyquist content is not representable
        lin = 1j * k**3
        lin[-1] = 0.0

        mask = np.ones(n // 2 + 1)
        if dealias:
            mask[n // 3 + 1:] = 0.0
        self.mask = mask
        self.ik = ik * mask

        z = dt * lin
        self.e_full = np.exp(z)
        self.e_half = np.exp(z / 2.0)
        # phi-function coefficients via full-circle contour averages; the
        # mean-value property makes these exact up to geometric quadrature
        # error, with no small-denominator trouble at k = 0
        m_pts = 32
        r = np.exp(2j * np.pi * (np.arange(m_pts) + 0.5) / m_pts)
        lr = z[:, None] + r[None, :]
        self.f_stage = dt * np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1)
        self.f1 = dt * np.mean(
            (-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1)
        self.f2 = dt * np.mean(
            (2.0 + lr + np.exp(lr) * (lr - 2.0)) / lr**3, axis=1)
        self.f3 = dt * np.mean(
            (-4.0 - 3.0 * lr - lr**2 + np.exp(lr) * (4.0 - lr)) / lr**3, axis=1)

    def nonlinear(self, vhat: np.ndarray) -> np.ndarray:
        u = np.fft.irfft(vhat * self.mask, n=self.grid.n_points)
        return -self.ik * np.fft.rfft(u**self.p)

    def step(self, vhat: np.ndarray) -> np.ndarray:
        n_v = self.nonlinear(vhat)
        a = self.e_half * vhat + self.f_stage * n_v
        n_a = self.nonlinear(a)
        b = self.e_half * vhat + self.f_stage * n_a
        n_b = self.nonlinear(b)
        c = self.e_half * a + self.f_stage * (2.0 * n_b - n_v)
        n_c = self.nonlinear(c)
        return (self.e_full * vhat + self.f1 * n_v
                + 2.0 * self.f2 * (n_a + n_b) + self.f3 * n_c)


@lru_cache(maxsize=8)
def _stepper_for(grid: GridSpec, p: int, dt: float, dealias: bool) -> _Stepper:
    return _Stepper(grid, p, dt, dealias)


def conserved_quantities(u: Field, p: int) -> tuple[float, float, float]:
    """(mass, energy, mean) = (int u^2, int u_y^2/2 - int u^(p+1)/(p+1), int u)."""
    dx = u.grid.spacing
    v = u.values
    du = spectral_derivative(v, u.grid, 1)
    mass = dx * float(np.dot(v, v))
    energy = 0.5 * dx * float(np.dot(du, du)) - dx * float(np.sum(v ** (p + 1))) / (p + 1)
    mean = dx * float(np.sum(v))
    return mass, energy, mean


def step(u: Field, cfg: EvolverConfig) -> Field:
    """Advance one time step (mainly for convergence studies)."""
    stepper = _stepper_for(u.grid, cfg.p, cfg.dt, cfg.dealias)
    vhat = np.fft.rfft(u.values)
    if cfg.dealias:
        vhat = vhat * stepper.mask
    return Field(u.grid, np.fft.irfft(stepper.step(vhat), n=u.grid.n_points))


def _make_point(t: float, grid: GridSpec, vhat: np.ndarray, p: int) -> TrajectoryPoint:
    u = Field(grid, np.fft.irfft(vhat, n=grid.n_points))
    mass, energy, mean = conserved_quantities(u, p)
    return TrajectoryPoint(t=t, u=u, mass=mass, energy=energy, mean_integral=mean)


def evolve(u0: Field, cfg: EvolverConfig, observers: tuple = ()) -> Trajectory:
    """Run to t_max (or an earlier halt), snapshotting every stride steps.

    Observers are called with each fresh TrajectoryPoint; a truthy return
    halts the run (a string return becomes the halt reason).
    """
    grid = u0.grid
    ceiling = stability_ceiling(grid, cfg.p, u0.values)
    if cfg.dt > ceiling:
        raise EvolveError(
            f"dt {cfg.dt:.3e} exceeds the advective ceiling {ceiling:.3e} "
            "for this initial state")

    stepper = _stepper_for(grid, cfg.p, cfg.dt, cfg.dealias)
    n_band = grid.n_points // 3 if cfg.dealias else grid.n_points // 2
    guard_band = slice(3 * n_band // 4, n_band + 1)

    vhat = np.fft.rfft(u0.values)
    if cfg.dealias:
        vhat = vhat * stepper.mask

    points = [_make_point(0.0, grid, vhat, cfg.p)]
    halt: str | None = None
    cfl_breach: float | None = None
    n_steps = int(round(cfg.t_max / cfg.dt))

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_steps + 1):
            vhat = stepper.step(vhat)
            if i % cfg.snapshot_stride and i != n_steps:
                continue
            t = i * cfg.dt
            if not np.all(np.isfinite(vhat)):
                halt = "non-finite"
                break
            point = _make_point(t, grid, vhat, cfg.p)
            points.append(point)
            if cfl_breach is None:
                if cfg.dt > stability_ceiling(grid, cfg.p, point.u.values):
                    cfl_breach = t
            total = float(np.sum(np.abs(vhat) ** 2))
            if cfg.resolution_guard is not None and total > 0:
                frac = float(np.sum(np.abs(vhat[guard_band]) ** 2)) / total
                if frac > cfg.resolution_guard:
                    halt = "resolution-loss"
                    break
            stop = None
            for obs in observers:
                stop = obs(point) or stop
            if stop:
                halt = stop if isinstance(stop, str) else "observer-stop"
                break

    return Trajectory(points=points, halt_reason=halt, config=cfg,
                      cfl_breach_t=cfl_breach)
