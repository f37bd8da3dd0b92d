"""Decomposition of a near-soliton state into scale, center, and remainder.

A state u close to the traveling-wave family is written

    u(x) = lambda1^(-1/2) (Q + eps)((x - x1) / lambda1),

equivalently eps(y) = lambda1^(1/2) u(lambda1 y + x1) - Q(y), with the two
free parameters pinned by the orthogonality conditions

    (eps, Q^((p+1)/2)) = 0      and      (eps, Q_y) = 0.

The first constraint kills the negative direction of the linearized
operator, the second the translation direction; together they make the
decomposition locally unique and the remainder equation coercive.  The
parameters are found by a damped Newton iteration on the two constraint
integrals, with the state resampled onto the soliton frame by exact
band-limited interpolation at every trial point.

tube_distance measures how far a state is from the translated soliton
family (translation only, no rescaling): the norm distance minimized over
the shift, the continuous minimizer located by refining the spectral
cross-correlation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize_scalar

from gkdv_lab.evolve import Trajectory, conserved_quantities
from gkdv_lab.grid import (
    Field,
    evaluate_at,
    h1_norm,
    inner,
    l2_norm,
    sample_scaled_shifted,
    spectral_derivative,
)
from gkdv_lab.ground_state import GroundState


class ModulationError(RuntimeError):
    """The Newton fit failed or left the trusted parameter window."""


_LAMBDA_WINDOW = (0.2, 5.0)
_CONSTRAINT_TOL = 1e-12
_MAX_ITERS = 50


def _check_frames(u: Field, gs: GroundState) -> None:
    if u.grid != gs.grid:
        raise ModulationError("state and soliton live on different grids")
    if gs.c != 1.0:
        raise ModulationError("decomposition is built around the c = 1 profile")


def _negative_direction(gs: GroundState) -> np.ndarray:
    """Q^((p+1)/2), the sign-definite eigenfunction of the linearization."""
    e = (gs.p + 1) / 2
    if float(e).is_integer():
        return gs.q.values ** int(e)
    return np.clip(gs.q.values, 0.0, None) ** e


def tube_distance(u: Field, gs: GroundState, norm: str = "h1") -> tuple[float, float]:
    """(alpha, y_star): min over shifts of ||u - Q(. - y0)|| and its argmin.

    The correlation <u, Q(. - y0)> is itself band-limited in y0, so the
    coarse grid argmax is polished by interpolating it continuously.
    """
    _check_frames(u, gs)
    if norm not in ("h1", "l2"):
        raise ValueError(f"norm must be 'h1' or 'l2', got {norm!r}")
    grid = u.grid
    k = grid.wavenumbers
    weight = 1.0 + k**2 if norm == "h1" else np.ones_like(k)
    cross = np.fft.rfft(u.values) * np.conj(np.fft.rfft(gs.q.values)) * weight
    corr = Field(grid, grid.spacing * np.fft.irfft(cross, n=grid.n_points))
    # corr.values[l] is the correlation at shift l*dx, so a shift y0 lives at
    # field coordinate x_left + y0
    x_left = grid.nodes[0]
    coarse = grid.spacing * int(np.argmax(corr.values))
    res = minimize_scalar(
        lambda y0: -float(evaluate_at(corr, np.array([x_left + y0]))[0]),
        bounds=(coarse - grid.spacing, coarse + grid.spacing),
        method="bounded",
        options={"xatol": 1e-11},
    )
    y_star = float(res.x)
    best = -float(res.fun)
    size = l2_norm if norm == "l2" else h1_norm
    dist_sq = size(u) ** 2 + size(gs.q) ** 2 - 2.0 * best
    half = grid.length / 2.0
    y_star = (y_star + half) % grid.length - half
    return float(np.sqrt(max(dist_sq, 0.0))), y_star


@dataclass(frozen=True)
class ModulationFit:
    lambda1: float
    x1: float
    epsilon: Field
    residual_neg: float  # (eps, Q^((p+1)/2)) after convergence
    residual_qy: float
    n_iter: int

    @property
    def residuals(self) -> tuple[float, float]:
        return (self.residual_neg, self.residual_qy)


def _remainder_field(u: Field, gs: GroundState, lam: float, x1: float) -> np.ndarray:
    w = sample_scaled_shifted(u, lam, x1, out_grid=gs.grid)
    return np.sqrt(lam) * w.values - gs.q.values


def modulate(
    u: Field,
    gs: GroundState,
    seed: tuple[float, float] | None = None,
    lambda_window: tuple[float, float] = _LAMBDA_WINDOW,
) -> ModulationFit:
    """Fit (lambda1, x1) so the remainder satisfies both orthogonality pins."""
    _check_frames(u, gs)
    dx = gs.grid.spacing
    nd = _negative_direction(gs)
    qy = gs.q_deriv.values

    def constraints(lam: float, x1: float) -> tuple[np.ndarray, np.ndarray]:
        eps = _remainder_field(u, gs, lam, x1)
        g = np.array([dx * np.dot(eps, nd), dx * np.dot(eps, qy)])
        return g, eps

    if seed is not None:
        lam, x1 = float(seed[0]), float(seed[1])
    else:
        lam, x1 = 1.0, tube_distance(u, gs, norm="l2")[1]

    g, eps = constraints(lam, x1)
    n_iter = 0
    while np.max(np.abs(g)) > _CONSTRAINT_TOL:
        n_iter += 1
        if n_iter > _MAX_ITERS:
            raise ModulationError(
                f"no convergence after {_MAX_ITERS} iterations "
                f"(constraint residual {np.max(np.abs(g)):.3e})")
        h_lam = 1e-6 * lam
        h_x = 1e-6 * max(1.0, abs(x1))
        g_lam, _ = constraints(lam + h_lam, x1)
        g_x, _ = constraints(lam, x1 + h_x)
        jac = np.column_stack([(g_lam - g) / h_lam, (g_x - g) / h_x])
        try:
            delta = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise ModulationError("singular constraint Jacobian") from exc
        # up to 5 step halvings when the residual fails to decrease
        scale = 1.0
        for _ in range(6):
            lam_new = lam + scale * delta[0]
            x_new = x1 + scale * delta[1]
            if lam_new > 0.0:
                g_new, eps_new = constraints(lam_new, x_new)
                if np.max(np.abs(g_new)) < np.max(np.abs(g)):
                    lam, x1, g, eps = lam_new, x_new, g_new, eps_new
                    break
            scale /= 2.0
        else:
            raise ModulationError(
                f"Newton stalled at constraint residual {np.max(np.abs(g)):.3e}")

    if not (lambda_window[0] < lam < lambda_window[1]):
        raise ModulationError(
            f"fitted scale {lam:.4f} outside the trusted window {lambda_window}")
    half = gs.grid.length / 2.0
    x1 = (x1 + half) % gs.grid.length - half
    return ModulationFit(
        lambda1=float(lam),
        x1=float(x1),
        epsilon=Field(gs.grid, eps),
        residual_neg=float(g[0]),
        residual_qy=float(g[1]),
        n_iter=n_iter,
    )


def remainder_nonlinear(eps: np.ndarray, q: np.ndarray, p: int) -> np.ndarray:
    """R(eps) = (Q+eps)^p - Q^p - p Q^(p-1) eps, summed term by term.

    The binomial form avoids the catastrophic cancellation of the direct
    difference when eps is small.
    """
    from math import comb

    out = np.zeros_like(eps)
    for j in range(2, p + 1):
        out += comb(p, j) * q ** (p - j) * eps**j
    return out


@dataclass
class ModulatedTrajectory:
    """Parameter and remainder series extracted from a snapshot sequence.

    Tube distances cover every snapshot; the fitted series stop at the
    first snapshot the Newton fit rejects (n_fit of them succeed).
    """

    gs: GroundState
    t: np.ndarray              # all snapshot times
    alpha_l2: np.ndarray       # translation-only distance, both norms
    alpha_h1: np.ndarray
    n_fit: int
    fit_failure: str | None
    s: np.ndarray              # rescaled time, trapezoid of 1/lambda^3
    lam: np.ndarray
    x: np.ndarray              # unwrapped center
    eps_l2: np.ndarray
    eps_h1: np.ndarray
    rate_scale: np.ndarray     # lambda_s / lambda, measured
    rate_shift: np.ndarray     # x_s / lambda - 1, measured
    mass_shift: np.ndarray     # 2(eps, Q) + ||eps||^2
    mass_window_leak: np.ndarray  # mass of u outside the rescaled frame's window
    energy_mismatch: np.ndarray
    residual_neg: np.ndarray
    residual_qy: np.ndarray
    stored: dict[int, Field] = field(default_factory=dict)

    @property
    def t_fit(self) -> np.ndarray:
        return self.t[: self.n_fit]


def modulated_trajectory(
    traj: Trajectory, gs: GroundState, eps_stride: int = 1
) -> ModulatedTrajectory:
    m = len(traj)
    t = traj.times
    alpha_l2 = np.empty(m)
    alpha_h1 = np.empty(m)
    for i, pt in enumerate(traj):
        alpha_l2[i], _ = tube_distance(pt.u, gs, norm="l2")
        alpha_h1[i], _ = tube_distance(pt.u, gs, norm="h1")

    p = gs.p
    q_field = gs.q
    lam = np.empty(m)
    x_raw = np.empty(m)
    eps_l2 = np.empty(m)
    eps_h1 = np.empty(m)
    mass_shift = np.empty(m)
    mass_leak = np.empty(m)
    energy_mismatch = np.empty(m)
    res_neg = np.empty(m)
    res_qy = np.empty(m)
    stored: dict[int, Field] = {}
    failure = None
    n_fit = 0
    seed = None
    for i, pt in enumerate(traj):
        try:
            fit = modulate(pt.u, gs, seed=seed)
        except ModulationError as exc:
            failure = str(exc)
            break
        seed = (fit.lambda1, fit.x1)
        lam[i] = fit.lambda1
        x_raw[i] = fit.x1
        eps = fit.epsilon
        eps_l2[i] = l2_norm(eps)
        eps_h1[i] = h1_norm(eps)
        mass_shift[i] = 2.0 * inner(eps, q_field) + eps_l2[i] ** 2
        # the y-box maps to a window of length lambda1 * L in the lab frame;
        # whatever mass sits outside it is invisible to the remainder
        grid = gs.grid
        rel = (pt.u.grid.nodes - fit.x1 + grid.length / 2) % grid.length \
            - grid.length / 2
        outside = np.abs(rel) > fit.lambda1 * grid.length / 2
        mass_leak[i] = grid.spacing * float(np.sum(pt.u.values[outside] ** 2))
        if p == 5:
            reconstructed = Field(gs.grid, q_field.values + eps.values)
            e_frame = conserved_quantities(reconstructed, p)[1]
            energy_mismatch[i] = abs(e_frame - fit.lambda1**2 * pt.energy)
        else:
            energy_mismatch[i] = np.nan
        res_neg[i] = fit.residual_neg
        res_qy[i] = fit.residual_qy
        if i % eps_stride == 0:
            stored[i] = eps
        n_fit = i + 1
    if n_fit and (n_fit - 1) not in stored:
        stored[n_fit - 1] = eps

    length = gs.grid.length
    x = x_raw[:n_fit].copy()
    for i in range(1, n_fit):
        x[i] += length * np.round((x[i - 1] - x[i]) / length)
    lam = lam[:n_fit]
    if n_fit:
        s = cumulative_trapezoid(1.0 / lam**3, t[:n_fit], initial=0.0)
    else:
        s = np.empty(0)
    if n_fit >= 3:
        rate_scale = np.gradient(np.log(lam), s)
        rate_shift = np.gradient(x, s) / lam - 1.0
    else:
        rate_scale = np.full(n_fit, np.nan)
        rate_shift = np.full(n_fit, np.nan)

    return ModulatedTrajectory(
        gs=gs,
        t=t,
        alpha_l2=alpha_l2,
        alpha_h1=alpha_h1,
        n_fit=n_fit,
        fit_failure=failure,
        s=s,
        lam=lam,
        x=x,
        eps_l2=eps_l2[:n_fit],
        eps_h1=eps_h1[:n_fit],
        rate_scale=rate_scale,
        rate_shift=rate_shift,
        mass_shift=mass_shift[:n_fit],
        mass_window_leak=mass_leak[:n_fit],
        energy_mismatch=energy_mismatch[:n_fit],
        residual_neg=res_neg[:n_fit],
        residual_qy=res_qy[:n_fit],
        stored=stored,
    )


def _lambda_weighted(f: Field, y: np.ndarray) -> np.ndarray:
    """(scaling generator applied to f) = f/2 + y f_y."""
    return 0.5 * f.values + y * spectral_derivative(f.values, f.grid, 1)


def epsilon_equation_residual(
    mt: ModulatedTrajectory, i: int, max_wavenumber: float = 3.0
) -> float:
    """Relative defect of the remainder equation at stored snapshot i.

    Differences the stored remainders at i-1, i, i+1 in rescaled time and
    compares with the expected right-hand side
    (L eps)_y + (lambda_s/lambda)(LQ + L eps) + (x_s/lambda - 1)(Q + eps)_y
    - R(eps)_y, using the measured parameter rates.

    Both sides are compared on the band |k| <= max_wavenumber and tapered
    to the frame interior.  Dispersive phases rotate at rate ~k^3 in
    rescaled time, so above roughly (1/2 / snapshot spacing)^(1/3) no
    finite difference in s can represent the time derivative at all, and
    the seam where the frame's window wraps the box carries entry/exit
    traffic the equation on the line does not model.  Inside the band and
    away from the seam the comparison is second order in the spacing.
    """
    gs = mt.gs
    if gs.p != 5:
        raise ModulationError("remainder-equation residual is defined at p = 5")
    for j in (i - 1, i, i + 1):
        if j not in mt.stored:
            raise ModulationError(f"snapshot {j} not stored; refit with eps_stride=1")
    grid = gs.grid
    y = gs.y
    q = gs.q.values
    e_prev = mt.stored[i - 1].values
    e_mid = mt.stored[i].values
    e_next = mt.stored[i + 1].values
    h_minus = mt.s[i] - mt.s[i - 1]
    h_plus = mt.s[i + 1] - mt.s[i]
    eps_s = (
        h_minus**2 * e_next
        - h_plus**2 * e_prev
        + (h_plus**2 - h_minus**2) * e_mid
    ) / (h_plus * h_minus * (h_plus + h_minus))

    mid = Field(grid, e_mid)
    l_eps = (
        -spectral_derivative(e_mid, grid, 2)
        + e_mid
        - gs.p * q ** (gs.p - 1) * e_mid
    )
    rhs = spectral_derivative(l_eps, grid, 1)
    rhs += mt.rate_scale[i] * (gs.lambda_q.values + _lambda_weighted(mid, y))
    rhs += mt.rate_shift[i] * (gs.q_deriv.values + spectral_derivative(e_mid, grid, 1))
    rhs -= spectral_derivative(remainder_nonlinear(e_mid, q, gs.p), grid, 1)

    flat = 0.3 * grid.length
    edge = 0.45 * grid.length
    ramp = np.clip((np.abs(y) - flat) / (edge - flat), 0.0, 1.0)
    taper = 0.5 * (1.0 + np.cos(np.pi * ramp))
    band = np.abs(grid.wavenumbers) <= max_wavenumber
    low = lambda v: np.fft.irfft(np.fft.rfft(v * taper) * band, n=grid.n_points)
    eps_s = low(eps_s)
    rhs = low(rhs)
    dx = grid.spacing
    num = np.sqrt(dx * np.sum((eps_s - rhs) ** 2))
    den = max(np.sqrt(dx * np.sum(eps_s**2)), np.sqrt(dx * np.sum(rhs**2)))
    if den <= 1e-6:
        # both sides at the integrator's error floor (a soliton run leaves
        # a remainder of ~1e-8): there is no dynamics to explain
        return 0.0
    return float(num / den)


def lemma_parameter_rates(eps: Field, gs: GroundState) -> tuple[float, float]:
    """Predicted (lambda_s/lambda, x_s/lambda - 1) from the remainder alone.

    Differentiating the two orthogonality pins along the flow and using
    L(Q_yy) = 20 Q^3 Q_y^2 and L((Q^3)_y) = -24 Q^2 Q_y + 20 Q^6 Q_y gives a
    2x2 linear system with O(||eps||) right-hand side; no truncation beyond
    the fitted remainder itself.
    """
    if gs.p != 5:
        raise ModulationError("parameter-rate system is specific to p = 5")
    if eps.grid != gs.grid:
        raise ModulationError("remainder and soliton live on different grids")
    dx = gs.grid.spacing
    y = gs.y
    q = gs.q.values
    qy = gs.q_deriv.values
    qyy = spectral_derivative(q, gs.grid, 2)
    e = eps.values
    r = remainder_nonlinear(e, q, 5)

    i_yq2qye = dx * np.sum(y * q**2 * qy * e)
    i_q2qye = dx * np.sum(q**2 * qy * e)
    i_q6qye = dx * np.sum(q**6 * qy * e)
    i_yqyye = dx * np.sum(y * qyy * e)
    i_qyye = dx * np.sum(qyy * e)
    i_q3qy2e = dx * np.sum(q**3 * qy**2 * e)
    i_q2qyr = dx * np.sum(q**2 * qy * r)
    i_qyyr = dx * np.sum(qyy * r)

    mat = np.array([
        [0.25 * gs.integrals.int_q4 - 3.0 * i_yq2qye, -3.0 * i_q2qye],
        [-i_yqyye, gs.integrals.int_qy2 - i_qyye],
    ])
    vec = np.array([
        20.0 * i_q6qye - 24.0 * i_q2qye - 3.0 * i_q2qyr,
        20.0 * i_q3qy2e - i_qyyr,
    ])
    rate_scale, rate_shift = np.linalg.solve(mat, vec)
    return float(rate_scale), float(rate_shift)
