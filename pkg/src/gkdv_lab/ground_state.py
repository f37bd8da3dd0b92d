"""Ground states of the generalized KdV equation on a periodic box.

The traveling-wave profile at speed c > 0 solves

    -c Q + Q_xx + Q^p = 0,

decays exponentially, and is even about its center.  For the critical power
p = 5 the profile has the closed form Q(x) = (3 c sech^2(2 sqrt(c) x))^(1/4)
(amplitude (3c)^(1/4), decay rate sqrt(c)); for other powers it is found by a
stabilized fixed-point iteration on the transform side.  The dilation family
is Q_c(x) = c^(1/(p-1)) Q(c^(1/2) x).

Alongside the profile itself, the module provides its derivative, the
scaling generator Lambda Q = Q/2 + y Q_y (the tangent to the dilation
family), the bounded antiderivative F of Lambda Q used by the virial
pairing, and the handful of moments that the rest of the laboratory keeps
reusing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gkdv_lab.grid import (
    Field,
    GridSpec,
    derivative,
    fit_log_slope,
    spectral_derivative,
)

DEFAULT_GRID = GridSpec(length=100.0, n_points=4096)

_RESIDUAL_TOL = 1e-8
_ITER_TOL = 1e-12
_MAX_ITERS = 500


class GroundStateError(RuntimeError):
    """Construction failed: bad parameters, short grid, or no convergence."""


@dataclass(frozen=True)
class GroundStateIntegrals:
    """Moments of the profile (all over the full box)."""

    int_q: float        # integral of Q
    int_q2: float       # integral of Q^2 (mass)
    int_q4: float       # integral of Q^4
    int_q6: float       # integral of Q^6
    int_qy2: float      # integral of (Q_y)^2
    int_qp1: float      # integral of Q^(p+1) (enters the energy)
    energy: float       # E[Q] = int_qy2/2 - int_qp1/(p+1)


@dataclass(frozen=True)
class GroundState:
    """Profile Q_c for power p on a periodic grid, with companions."""

    p: int
    c: float
    grid: GridSpec
    q: Field
    q_deriv: Field
    lambda_q: Field
    f_primitive: Field
    integrals: GroundStateIntegrals
    decay_rate: float   # fitted slope of log Q on the right flank
    residual: float     # sup norm of -cQ + Q_yy + Q^p

    @property
    def center(self) -> float:
        return self.grid.origin_offset

    @property
    def y(self) -> np.ndarray:
        """Coordinates relative to the profile center."""
        return self.grid.nodes - self.grid.origin_offset


def closed_form_profile(p: int, c: float, x: np.ndarray) -> np.ndarray:
    """Analytic soliton profile, valid for any integer p >= 2."""
    amp = (0.5 * (p + 1) * c) ** (1.0 / (p - 1))
    arg = 0.5 * (p - 1) * math.sqrt(c) * np.asarray(x)
    # sech^(2/(p-1)) evaluated stably for large |arg|
    sech = 2.0 * np.exp(-np.abs(arg)) / (1.0 + np.exp(-2.0 * np.abs(arg)))
    return amp * sech ** (2.0 / (p - 1))


def _iterate_profile(p: int, c: float, grid: GridSpec) -> np.ndarray:
    """Stabilized transform-side fixed point for (c - d_yy) Q = Q^p.

    Each sweep solves the linear part exactly and rescales by gamma^theta
    with theta = p/(p-1), which turns the soliton into an attracting fixed
    point; gamma -> 1 at convergence.
    """
    y = grid.nodes - grid.origin_offset
    k2 = grid.wavenumbers ** 2
    theta = p / (p - 1.0)
    dx = grid.spacing
    q = 1.5 * c ** (1.0 / (p - 1)) * np.exp(-math.sqrt(c) * y**2 / 4.0)
    for _ in range(_MAX_ITERS):
        qp = q**p
        qy = spectral_derivative(q, grid, 1)
        num = dx * (c * np.dot(q, q) + np.dot(qy, qy))
        den = dx * np.dot(q, qp)
        if den <= 0:
            raise GroundStateError("iteration collapsed (nonpositive pairing)")
        gamma = num / den
        q_next = np.fft.irfft(gamma**theta * np.fft.rfft(qp) / (c + k2),
                              n=grid.n_points)
        step = float(np.max(np.abs(q_next - q)))
        q = q_next
        if step < _ITER_TOL:
            return q
    raise GroundStateError(
        f"profile iteration did not converge in {_MAX_ITERS} sweeps (p={p}, c={c})")


def _antiderivative_of(vals: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Cumulative integral from the left box edge, exact for the interpolant.

    The integrand has nonzero mean, so its primitive is a linear ramp plus a
    periodic part; the periodic part is integrated on the transform side.
    """
    mean = float(np.mean(vals))
    vhat = np.fft.rfft(vals - mean)
    k = grid.wavenumbers.copy()
    k[0] = 1.0  # zero mode already removed
    phat = vhat / (1j * k)
    phat[0] = 0.0
    phat[-1] = 0.0
    periodic = np.fft.irfft(phat, n=grid.n_points)
    ramp = mean * (grid.nodes - grid.nodes[0])
    return ramp + periodic - periodic[0]


def ground_state(p: int = 5, c: float = 1.0,
                 grid: GridSpec = DEFAULT_GRID) -> GroundState:
    """Build the speed-c ground state for power p on the given grid."""
    if not isinstance(p, (int, np.integer)) or p < 2:
        raise GroundStateError(f"power p must be an integer >= 2, got {p}")
    if not (np.isfinite(c) and c > 0):
        raise GroundStateError(f"speed c must be positive, got {c}")
    # the tails must clear the quadrature floor inside the box
    half_decay = math.sqrt(c) * grid.length / 2.0
    if math.exp(-half_decay) > 1e-10:
        raise GroundStateError(
            f"grid too short: decay over half a box is only e^-{half_decay:.1f}")

    y = grid.nodes - grid.origin_offset
    if p == 5:
        q_vals = closed_form_profile(5, c, y)
    else:
        q_vals = _iterate_profile(p, c, grid)

    res = -c * q_vals + spectral_derivative(q_vals, grid, 2) + q_vals**p
    residual = float(np.max(np.abs(res)))
    if residual > _RESIDUAL_TOL:
        raise GroundStateError(f"profile residual {residual:.2e} exceeds tolerance")

    q = Field(grid, q_vals)
    q_deriv = derivative(q)
    lam_q = Field(grid, 0.5 * q_vals + y * q_deriv.values)
    f_prim = Field(grid, _antiderivative_of(lam_q.values, grid))

    dx = grid.spacing
    qy = q_deriv.values
    integrals = GroundStateIntegrals(
        int_q=float(dx * np.sum(q_vals)),
        int_q2=float(dx * np.dot(q_vals, q_vals)),
        int_q4=float(dx * np.sum(q_vals**4)),
        int_q6=float(dx * np.sum(q_vals**6)),
        int_qy2=float(dx * np.dot(qy, qy)),
        int_qp1=float(dx * np.sum(q_vals ** (p + 1))),
        energy=float(0.5 * dx * np.dot(qy, qy)
                     - dx * np.sum(q_vals ** (p + 1)) / (p + 1)),
    )

    # measured decay rate on the right flank, away from center and edge
    lo, hi = 8.0 / math.sqrt(c), min(20.0 / math.sqrt(c), 0.4 * grid.length)
    window = (y > lo) & (y < hi)
    decay = -fit_log_slope(y[window], q_vals[window])

    return GroundState(p=int(p), c=float(c), grid=grid, q=q, q_deriv=q_deriv,
                       lambda_q=lam_q, f_primitive=f_prim, integrals=integrals,
                       decay_rate=float(decay), residual=residual)


def scaling_generator(gs: GroundState) -> Field:
    """Lambda Q = Q/2 + y Q_y, the tangent to the dilation family at Q."""
    return Field(gs.grid, 0.5 * gs.q.values + gs.y * gs.q_deriv.values)


def primitive_F(gs: GroundState) -> Field:
    """Bounded antiderivative of Lambda Q, zero at the left box edge.

    Its right-edge value is the full integral of Lambda Q, which equals
    -(1/2) * integral of Q for the critical dilation exponent.
    """
    return Field(gs.grid, _antiderivative_of(scaling_generator(gs).values, gs.grid))


def ode_residual(gs: GroundState) -> Field:
    """-c Q + Q_yy + Q^p on the grid (diagnostic)."""
    vals = (-gs.c * gs.q.values
            + spectral_derivative(gs.q.values, gs.grid, 2)
            + gs.q.values**gs.p)
    return Field(gs.grid, vals)
