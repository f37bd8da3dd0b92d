"""Periodic one-dimensional grids and band-limited real fields.

Everything downstream (differentiation, quadrature, translation, rescaling)
is transform based: a field is identified with the trigonometric interpolant
through its samples.  Exponentially decaying profiles are therefore carried
to near machine precision as long as their tails sit below the quadrature
floor at the box edges; callers are expected to audit that themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Inconsistent grid or field construction."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid: n_points samples on [center - L/2, center + L/2).

    length : box size L (positive).
    n_points : sample count, a power of two (FFT length).
    origin_offset : center of the box; profiles are conventionally even
        about this point.
    """

    length: float
    n_points: int
    origin_offset: float = 0.0

    def __post_init__(self) -> None:
        if not (self.length > 0 and np.isfinite(self.length)):
            raise GridError(f"length must be positive and finite, got {self.length}")
        n = self.n_points
        if n < 16 or (n & (n - 1)) != 0:
            raise GridError(f"n_points must be a power of two >= 16, got {n}")
        if not np.isfinite(self.origin_offset):
            raise GridError("origin_offset must be finite")

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        """Sample locations, ascending."""
        return (self.origin_offset - 0.5 * self.length
                + self.spacing * np.arange(self.n_points))

    @property
    def wavenumbers(self) -> np.ndarray:
        """Nonnegative wavenumbers in rfft layout, 2*pi*m/L for m = 0..n/2."""
        return 2.0 * np.pi * np.arange(self.n_points // 2 + 1) / self.length

    @property
    def max_wavenumber(self) -> float:
        return float(np.pi * self.n_points / self.length)


@dataclass(frozen=True)
class Field:
    """Real samples on a GridSpec.  Immutable after construction."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_points,):
            raise GridError(
                f"values shape {v.shape} does not match grid ({self.grid.n_points},)")
        if not np.all(np.isfinite(v)):
            raise GridError("field values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _same_grid(a: Field, b: Field) -> GridSpec:
    if a.grid != b.grid:
        raise GridError("fields live on different grids")
    return a.grid


# ---------------------------------------------------------------------------
# transform-side primitives on raw arrays (hot paths reuse these directly)

def _unit_phase(turns: np.ndarray) -> np.ndarray:
    """e^{2 pi i turns} with the argument reduced mod 1 in extended precision.

    Phase arguments below grow like n^2; reducing them in float64 costs
    ~n^2 * eps of accuracy, which is visible at n = 4096."""
    reduced = np.mod(np.asarray(turns, dtype=np.longdouble), 1.0)
    return np.exp(2j * np.pi * reduced.astype(np.float64))


def _chirp_eval(d: np.ndarray, beta: float, n_out: int) -> np.ndarray:
    """S_k = sum_n d[n] e^{2 pi i beta k n}, k = 0..n_out-1 (Bluestein)."""
    n_in = d.shape[0]
    size = 1
    while size < n_in + n_out - 1:
        size *= 2
    m = np.arange(max(n_in, n_out), dtype=np.longdouble)
    chirp = _unit_phase(np.longdouble(beta) * m * m / 2.0)
    a = np.zeros(size, dtype=np.complex128)
    a[:n_in] = d * chirp[:n_in]
    b = np.zeros(size, dtype=np.complex128)
    b[:n_out] = np.conj(chirp[:n_out])
    b[size - n_in + 1:] = np.conj(chirp[1:n_in][::-1])
    out = np.fft.ifft(np.fft.fft(a) * np.fft.fft(b))[:n_out]
    out *= chirp[:n_out]
    return out

def spectral_derivative(values: np.ndarray, grid: GridSpec, order: int = 1) -> np.ndarray:
    if order < 0:
        raise GridError("derivative order must be nonnegative")
    if order == 0:
        return np.asarray(values, dtype=np.float64).copy()
    vhat = np.fft.rfft(values)
    vhat *= (1j * grid.wavenumbers) ** order
    if order % 2 == 1:
        vhat[-1] = 0.0  # Nyquist mode carries no usable odd derivative
    return np.fft.irfft(vhat, n=grid.n_points)


def derivative(f: Field, order: int = 1) -> Field:
    return Field(f.grid, spectral_derivative(f.values, f.grid, order))


def quadrature(f: Field) -> float:
    """Trapezoid rule; on a uniform periodic grid this is spacing * sum."""
    return float(f.grid.spacing * np.sum(f.values))


def inner(f: Field, g: Field) -> float:
    grid = _same_grid(f, g)
    return float(grid.spacing * np.dot(f.values, g.values))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.spacing) * np.linalg.norm(f.values))


def h1_norm(f: Field) -> float:
    df = spectral_derivative(f.values, f.grid, 1)
    dx = f.grid.spacing
    return float(np.sqrt(dx * (np.dot(f.values, f.values) + np.dot(df, df))))


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def shift_field(f: Field, delta: float) -> Field:
    """Samples of the band-limited interpolant at x - delta (content moves right
    by delta).  Exact for the represented trigonometric polynomial."""
    vhat = np.fft.rfft(f.values)
    vhat *= np.exp(-1j * f.grid.wavenumbers * delta)
    vhat[-1] = 0.0  # fractional shift of the unpaired Nyquist mode is not real
    return Field(f.grid, np.fft.irfft(vhat, n=f.grid.n_points))


def sample_scaled_shifted(f: Field, scale: float, offset: float,
                          out_grid: GridSpec | None = None) -> Field:
    """Samples u(scale * y + offset) on out_grid (default: f's grid).

    u is the periodic band-limited interpolant of f; the target points are
    uniformly spaced, so the evaluation is a single chirp-z transform.
    """
    if not (np.isfinite(scale) and scale > 0):
        raise GridError(f"scale must be positive, got {scale}")
    grid = f.grid
    out = grid if out_grid is None else out_grid
    n = grid.n_points
    coeff = np.fft.fftshift(np.fft.fft(f.values)) / n  # index m <-> mode m - n/2
    coeff[0] = 0.0  # drop the unpaired Nyquist mode
    y = out.nodes
    x_left = grid.nodes[0]
    alpha0 = (scale * y[0] + offset - x_left) / grid.length
    beta = scale * out.spacing / grid.length
    modes = np.arange(n, dtype=np.longdouble) - n // 2
    d = coeff * _unit_phase(modes * np.longdouble(alpha0))
    vals = _chirp_eval(d, beta, out.n_points)
    j = np.arange(out.n_points, dtype=np.longdouble)
    vals = vals * _unit_phase(-0.5 * np.longdouble(n * beta) * j)
    return Field(out, np.real(vals))


def evaluate_at(f: Field, points: np.ndarray) -> np.ndarray:
    """Band-limited interpolant of f at arbitrary points (direct sum, O(N*P))."""
    pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
    grid = f.grid
    coeff = np.fft.rfft(f.values) / grid.n_points
    coeff[-1] = 0.0
    weights = np.full(coeff.shape, 2.0)
    weights[0] = 1.0  # DC mode is unpaired
    turns = np.outer((pts - grid.nodes[0]).astype(np.longdouble),
                     np.arange(coeff.shape[0], dtype=np.longdouble) / grid.length)
    return np.real(_unit_phase(turns) @ (coeff * weights))


def band_limited_noise(grid: GridSpec, rng: np.random.Generator,
                       rms: float = 1.0, keep_fraction: float = 2.0 / 3.0) -> Field:
    """Random real field with spectral support in the lowest keep_fraction
    of the resolvable band; used as generic test input."""
    n = grid.n_points
    n_modes = n // 2 + 1
    cutoff = int(keep_fraction * (n // 2))
    coeff = np.zeros(n_modes, dtype=np.complex128)
    live = slice(1, max(2, cutoff))
    count = live.stop - live.start
    coeff[live] = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    v = np.fft.irfft(coeff, n=n)
    norm = np.sqrt(np.mean(v * v))
    if norm > 0:
        v *= rms / norm
    return Field(grid, v)


def fit_log_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log|y| against x; nonpositive y entries are
    dropped.  Returns nan when fewer than 3 usable points remain."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = y > 0
    if np.count_nonzero(keep) < 3:
        return float("nan")
    slope, _ = np.polyfit(x[keep], np.log(y[keep]), 1)
    return float(slope)
