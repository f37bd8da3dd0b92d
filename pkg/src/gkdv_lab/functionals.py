"""Scalar diagnostics for the flow near the soliton.

Three families live here.  A smoothed step weight (``psi`` and its
derivatives) measures how much mass sits ahead of the traveling wave;
along the flow that weighted mass can only grow by an amount
exponentially small in the offset, which is the monotonicity statement
the experiments audit.  A one-sided smooth cutoff (``cutoff_phi_A``)
truncates slowly decaying integrands at a tunable plateau radius.  On
top of both sits the virial pairing ``virial_J`` of the fitted remainder
with the primitive of the scaling direction, and its dilation-rescaled
series ``functional_K`` whose forced growth is the instability signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .evolve import Trajectory, conserved_quantities
from .grid import Field, derivative, h1_norm, inner, l2_norm, quadrature
from .ground_state import GroundState
from .modulation import ModulatedTrajectory

__all__ = [
    "WeightConfig",
    "FunctionalSeries",
    "psi",
    "psi1",
    "psi3",
    "cutoff_phi_A",
    "monotonicity_I",
    "right_tail_mass",
    "virial_J",
    "kappa",
    "functional_K",
    "energy_linearization_check",
    "SmallnessReport",
    "smallness_comparisons",
    "select_cutoff_scale",
]


@dataclass(frozen=True)
class WeightConfig:
    """Parameters of the step weight and the cutoff.

    m : transition length of the weight; the monotonicity estimates
        need m >= 4.
    x0 : offset of the weight ahead of the wave, positive.
    a : plateau radius of the cutoff, at least 1 (math.inf drops the
        cutoff); None defers the choice to select_cutoff_scale.
    """

    m: float = 4.0
    x0: float = 10.0
    a: float | None = None

    def __post_init__(self) -> None:
        if not (np.isfinite(self.m) and self.m >= 4.0):
            raise ValueError(f"weight scale m must be >= 4, got {self.m}")
        if not (np.isfinite(self.x0) and self.x0 > 0.0):
            raise ValueError(f"offset x0 must be positive, got {self.x0}")
        if self.a is not None and not self.a >= 1.0:
            raise ValueError(f"cutoff scale a must be >= 1, got {self.a}")


@dataclass(frozen=True)
class FunctionalSeries:
    """A finite scalar series over rescaled time."""

    s: np.ndarray
    values: np.ndarray
    label: str

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if s.ndim != 1 or s.shape != v.shape:
            raise ValueError("s and values must be aligned one-dimensional arrays")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ValueError("series entries must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.s.size)


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def psi(x, m: float):
    """Smoothed step from 0 to 1 with transition length m; psi(0) = 1/2."""
    arr, scalar = _as_array(x)
    t = arr / m
    # arctan(exp(t)) + arctan(exp(-t)) = pi/2, so both branches go through
    # exp(-|t|) and neither overflows.
    val = (2.0 / np.pi) * np.arctan(np.exp(-np.abs(t)))
    out = np.where(t >= 0.0, 1.0 - val, val)
    return float(out) if scalar else out


def _sech(t: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    return 2.0 * np.exp(-a) / (1.0 + np.exp(-2.0 * a))


def psi1(x, m: float):
    """First derivative of psi: 1 / (pi m cosh(x/m)), positive everywhere."""
    arr, scalar = _as_array(x)
    out = _sech(arr / m) / (np.pi * m)
    return float(out) if scalar else out


def psi3(x, m: float):
    """Third derivative of psi; |psi3| <= psi1 / m**2 pointwise."""
    arr, scalar = _as_array(x)
    sech = _sech(arr / m)
    out = sech * (1.0 - 2.0 * sech**2) / (np.pi * m**3)
    return float(out) if scalar else out


# The cutoff profile is the normalized upper tail integral of the standard
# bump exp(-1/((w-1)(2-w))) on (1, 2): infinitely differentiable, exactly 1
# below the plateau radius and exactly 0 beyond twice that radius.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _bump(w: np.ndarray) -> np.ndarray:
    inside = (w > 1.0) & (w < 2.0)
    safe = np.where(inside, w, 1.5)
    return np.where(inside, np.exp(-1.0 / ((safe - 1.0) * (2.0 - safe))), 0.0)


def _bump_tail(z: np.ndarray) -> np.ndarray:
    """Integral of the bump over (z, 2), elementwise in z."""
    z = np.clip(z, 1.0, 2.0)
    half = 0.5 * (2.0 - z)
    w = (z + half)[..., None] + half[..., None] * _GL_NODES
    return half * np.sum(_GL_WEIGHTS * _bump(w), axis=-1)


_BUMP_MASS = float(_bump_tail(np.asarray(1.0)))


def cutoff_phi_A(y, a: float):
    """One-sided cutoff: 1 for y <= a, 0 for y >= 2a, smooth and decreasing."""
    if not a >= 1.0:
        raise ValueError(f"cutoff scale must be >= 1, got {a}")
    arr, scalar = _as_array(y)
    if math.isinf(a):
        out = np.ones_like(arr)
        return float(out) if scalar else out
    z = arr / a
    # The tail quadrature can overshoot the normalization by an ulp.
    ratio = np.clip(_bump_tail(z) / _BUMP_MASS, 0.0, 1.0)
    out = np.where(z <= 1.0, 1.0, np.where(z >= 2.0, 0.0, ratio))
    return float(out) if scalar else out


def _snapshot_index(traj: Trajectory, t: float) -> int:
    times = traj.times
    i = int(np.argmin(np.abs(times - t)))
    if abs(float(times[i]) - t) > 1e-8:
        raise ValueError(f"time {t} is not a stored snapshot of the trajectory")
    return i


def _wrapped_displacement(grid, center: float) -> np.ndarray:
    half = 0.5 * grid.length
    return np.mod(grid.nodes - center + half, grid.length) - half


def monotonicity_I(traj: Trajectory, x_of_t: Callable[[float], float],
                   cfg: WeightConfig, t: float, t0: float) -> float:
    """Weighted mass ahead of the wave at time t, anchored at time t0.

    The weight steps up at x(t0) - (t0 - t)/2 + x0, which stays ahead of
    the wave for t <= t0 whenever the wave moves at least three quarters
    of unit speed.  Comparing the value at t with the value at t0 is the
    almost-monotonicity check: the difference I(t0) - I(t) stays below a
    single constant times exp(-x0/m) along a confined run.
    """
    if not 0.0 <= t <= t0:
        raise ValueError(f"need 0 <= t <= t0, got t={t}, t0={t0}")
    i = _snapshot_index(traj, t)
    _snapshot_index(traj, t0)
    u = traj[i].u
    center = float(x_of_t(t0)) - 0.5 * (t0 - t) + cfg.x0
    # The box is periodic, so the weight rides the wrapped displacement;
    # its jump at the far seam sits where psi has saturated to machine level.
    rel = _wrapped_displacement(u.grid, center)
    return quadrature(Field(u.grid, u.values**2 * psi(rel, cfg.m)))


def right_tail_mass(u: Field, center: float, x0: float) -> float:
    """Mass of u more than x0 to the right of center (wrapped displacement)."""
    if not x0 > 0.0:
        raise ValueError(f"x0 must be positive, got {x0}")
    rel = _wrapped_displacement(u.grid, center)
    return quadrature(Field(u.grid, np.where(rel > x0, u.values**2, 0.0)))


def virial_J(eps: Field, gs: GroundState, a: float) -> float:
    """Pairing of the remainder with the primitive of the scaling direction.

    The primitive is bounded but does not decay to the right, so the
    pairing is truncated at plateau radius a; a = math.inf keeps it whole.
    """
    if eps.grid != gs.grid:
        raise ValueError("remainder grid does not match the profile grid")
    if not a >= 1.0:
        raise ValueError(f"cutoff scale must be >= 1, got {a}")
    w = gs.f_primitive.values
    if not math.isinf(a):
        w = w * cutoff_phi_A(gs.y, a)
    return quadrature(Field(gs.grid, eps.values * w))


def kappa(gs: GroundState) -> float:
    """Offset constant of the rescaled virial: one quarter of (int Q)^2."""
    return 0.25 * gs.integrals.int_q**2


def functional_K(mt: ModulatedTrajectory, gs: GroundState,
                 a: float) -> tuple[FunctionalSeries, FunctionalSeries]:
    """Rescaled virial series sqrt(lambda) (J_a - kappa) and its slope in s.

    Needs the remainder stored at every fitted snapshot.  The slope series
    is a centered difference on the (nonuniform) rescaled-time axis.
    """
    n = mt.n_fit
    if n < 2:
        raise ValueError("need at least two fitted snapshots")
    offset = kappa(gs)
    vals = np.empty(n)
    for i in range(n):
        eps = mt.stored.get(i)
        if eps is None:
            raise ValueError(
                f"snapshot {i} has no stored remainder; refit with eps_stride=1")
        vals[i] = math.sqrt(mt.lam[i]) * (virial_J(eps, gs, a) - offset)
    s = mt.s[:n]
    name = "K" if math.isinf(a) else f"K(a={a:g})"
    series = FunctionalSeries(s, vals, name)
    slope = FunctionalSeries(s, np.gradient(vals, s), f"d{name}/ds")
    return series, slope


def energy_linearization_check(eps: Field, gs: GroundState) -> float:
    """Gap in the exact expansion of the energy about the profile.

    E[Q + eps] + (int Q eps + 1/2 int eps^2) equals
    E[Q] + 1/2 (L eps, eps) minus the cubic-and-higher profile moments;
    the identity is algebraic, so the return is pure discretization error.
    """
    if eps.grid != gs.grid:
        raise ValueError("field grid does not match the profile grid")
    p = gs.p
    dx = gs.grid.spacing
    q = gs.q.values
    e = eps.values
    u = Field(gs.grid, q + e)
    _, energy, _ = conserved_quantities(u, p)
    lhs = energy + inner(gs.q, eps) + 0.5 * l2_norm(eps) ** 2

    ey = derivative(eps).values
    quad_form = float(np.sum(ey**2 + gs.c * e**2 - p * q ** (p - 1) * e**2) * dx)
    tail = 0.0
    for j in range(3, p + 2):
        tail += math.comb(p + 1, j) * float(np.sum(q ** (p + 1 - j) * e**j) * dx)
    rhs = gs.integrals.energy + 0.5 * quad_form - tail / (p + 1)
    return abs(lhs - rhs)


@dataclass(frozen=True)
class SmallnessReport:
    """Quadratic-in-remainder comparisons for a perturbed profile.

    All three gaps are exactly quadratic in the remainder when the
    profile energy vanishes (the critical power); their size against
    the squared H1 norm is what the growth argument budgets.
    """

    m0: float                  # mass of Q + eps minus mass of Q
    energy0: float             # energy of Q + eps
    pairing: float             # int eps Q
    gap_mass: float            # |m0 - 2 pairing|, equals ||eps||_2^2
    gap_energy_pairing: float  # |energy0 + pairing|
    gap_energy_mass: float     # |energy0 + m0/2|
    h1_sq: float               # squared H1 norm of eps

    @property
    def ratios(self) -> tuple[float, float, float]:
        if self.h1_sq == 0.0:
            return (0.0, 0.0, 0.0)
        return (self.gap_mass / self.h1_sq,
                self.gap_energy_pairing / self.h1_sq,
                self.gap_energy_mass / self.h1_sq)


def smallness_comparisons(eps0: Field, gs: GroundState) -> SmallnessReport:
    if eps0.grid != gs.grid:
        raise ValueError("field grid does not match the profile grid")
    pairing = inner(eps0, gs.q)
    m0 = 2.0 * pairing + l2_norm(eps0) ** 2
    u = Field(gs.grid, gs.q.values + eps0.values)
    _, e0, _ = conserved_quantities(u, gs.p)
    return SmallnessReport(
        m0=m0,
        energy0=e0,
        pairing=pairing,
        gap_mass=abs(m0 - 2.0 * pairing),
        gap_energy_pairing=abs(e0 + pairing),
        gap_energy_mass=abs(e0 + 0.5 * m0),
        h1_sq=h1_norm(eps0) ** 2,
    )


def select_cutoff_scale(m: float, pairing: float) -> float:
    """Smallest plateau radius whose truncation error is beaten by the data.

    Picks the least a >= 1 with sqrt(a) exp(-a/(4m)) + 1/sqrt(a) at or
    below sqrt(pairing).  The left side peaks at a = 2m and decays
    beyond, so once the floor a = 1 fails the crossing is unique and a
    doubling search brackets it.
    """
    if not (np.isfinite(m) and m >= 4.0):
        raise ValueError(f"weight scale m must be >= 4, got {m}")
    if not pairing > 0.0:
        raise ValueError(f"pairing must be positive, got {pairing}")
    target = math.sqrt(pairing)

    def excess(a: float) -> float:
        return math.sqrt(a) * math.exp(-a / (4.0 * m)) + 1.0 / math.sqrt(a) - target

    if excess(1.0) <= 0.0:
        return 1.0
    # The curve is not monotone below its peak at 2m (it dips slightly just
    # above the floor), so scan that stretch for an early crossing first.
    scan = np.linspace(1.0, 2.0 * m, 65)
    vals = np.array([excess(float(av)) for av in scan])
    below = np.nonzero(vals <= 0.0)[0]
    if below.size:
        i = int(below[0])
        lo, hi = float(scan[i - 1]), float(scan[i])
    else:
        lo = 2.0 * m
        hi = 2.0 * lo
        while excess(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
            if hi > 1e12:
                raise ValueError("no admissible cutoff scale below 1e12")
    root = float(brentq(excess, lo, hi, xtol=1e-10))
    # Land on the admissible side of the crossing.
    return root if excess(root) <= 0.0 else root + 1e-8
