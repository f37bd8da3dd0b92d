"""The Schrodinger operator obtained by linearizing around the ground state.

For power p the operator is

    L f = -f_yy + c f - p Q^(p-1) f,

self-adjoint on the box.  At the critical power (p = 5, c = 1) its bottom
spectrum is rigid: a single negative eigenvalue -8 with even eigenfunction
proportional to Q^3, a kernel spanned by Q_y, and continuum from c upward.
Two consequences drive everything downstream: L(Lambda Q) = -2 Q, and the
quadratic form is coercive, (L f, f) >= ||f||_2^2, once f is orthogonal to
both Q^3 and Q_y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from gkdv_lab.grid import Field, GridError, GridSpec, inner, l2_norm, spectral_derivative
from gkdv_lab.ground_state import GroundState

_DENSE_CAP = 4096
_EIG_RESIDUAL_TOL = 1e-6


class LinopError(RuntimeError):
    """Eigensolve or projection failure."""


@dataclass(frozen=True)
class LinearizedOperator:
    gs: GroundState

    @property
    def grid(self) -> GridSpec:
        return self.gs.grid

    @property
    def potential(self) -> np.ndarray:
        """Multiplicative part c - p Q^(p-1)."""
        gs = self.gs
        return gs.c - gs.p * gs.q.values ** (gs.p - 1)


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray           # ascending eigenvalues
    functions: tuple[Field, ...]  # unit L^2 norm (quadrature weighted)
    residuals: np.ndarray        # ||L phi - lambda phi||_2 per pair


def apply_L(op: LinearizedOperator, f: Field) -> Field:
    if f.grid != op.grid:
        raise GridError("field grid does not match operator grid")
    vals = -spectral_derivative(f.values, f.grid, 2) + op.potential * f.values
    return Field(f.grid, vals)


def dense_matrix(op: LinearizedOperator) -> np.ndarray:
    """L as a dense symmetric matrix, transform-consistent with apply_L."""
    n = op.grid.n_points
    if n > _DENSE_CAP:
        raise LinopError(f"dense solve capped at {_DENSE_CAP} points, got {n}")
    k2 = op.grid.wavenumbers ** 2
    eye_hat = np.fft.rfft(np.eye(n), axis=0)
    second = np.fft.irfft(-k2[:, None] * eye_hat, n=n, axis=0)
    mat = -second + np.diag(op.potential)
    return 0.5 * (mat + mat.T)  # symmetrize away transform roundoff


def spectrum_of_L(op: LinearizedOperator, k: int = 3) -> EigenPairs:
    """Lowest k eigenpairs of the dense discretization."""
    if k < 1:
        raise LinopError("need at least one eigenpair")
    mat = dense_matrix(op)
    vals, vecs = scipy.linalg.eigh(mat, subset_by_index=[0, k - 1])
    dx = op.grid.spacing
    functions = []
    residuals = np.empty(k)
    for i in range(k):
        phi = vecs[:, i] / np.sqrt(dx)  # unit norm under quadrature weights
        # fix an orientation so results are reproducible across libraries
        anchor = np.argmax(np.abs(phi))
        if phi[anchor] < 0:
            phi = -phi
        field = Field(op.grid, phi)
        functions.append(field)
        residuals[i] = l2_norm(Field(op.grid,
                                     apply_L(op, field).values - vals[i] * phi))
    if np.any(residuals > _EIG_RESIDUAL_TOL):
        raise LinopError(f"eigenpair residuals {residuals} exceed tolerance")
    return EigenPairs(values=vals, functions=tuple(functions), residuals=residuals)


def project_orthogonal(f: Field, constraints: list[Field]) -> Field:
    """Remove the span of the constraint fields from f (quadrature inner
    product).  One refinement pass keeps the residual pairings near roundoff."""
    if not constraints:
        return Field(f.grid, f.values.copy())
    for g in constraints:
        if g.grid != f.grid:
            raise GridError("constraint grid mismatch")
    basis = np.stack([g.values for g in constraints])
    dx = f.grid.spacing
    gram = dx * basis @ basis.T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise LinopError(f"constraint set is near-degenerate (cond {cond:.2e})")
    vals = f.values.copy()
    for _ in range(2):
        coeffs = np.linalg.solve(gram, dx * basis @ vals)
        vals = vals - coeffs @ basis
    residual = np.max(np.abs(dx * basis @ vals))
    scale = max(l2_norm(f), 1e-300)
    if residual > 1e-12 * scale:
        raise LinopError(f"projection residual {residual:.2e} too large")
    return Field(f.grid, vals)


def coercivity_ratio(op: LinearizedOperator, f: Field) -> float:
    """(L f, f) / (f, f); the caller supplies an already-projected field."""
    nrm2 = inner(f, f)
    if nrm2 <= 0 or not np.isfinite(nrm2):
        raise LinopError("coercivity ratio of a null field")
    return inner(apply_L(op, f), f) / nrm2
