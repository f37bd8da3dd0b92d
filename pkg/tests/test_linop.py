"""Linearized-operator facts: spectrum, kernel, algebraic identities,
coercivity under the two orthogonality constraints.

Analytic oracles used here (verifiable by hand from Q_yy = Q - Q^5 and the
first integral (Q_y)^2 = Q^2 - Q^6/3):

    L(Q^3)      = -8 Q^3        (unique negative direction)
    L(Q_y)      = 0             (translation kernel)
    L(Lambda Q) = -2 Q          (dilation identity)
"""

import numpy as np
import pytest

from gkdv_lab.grid import (
    Field,
    GridSpec,
    band_limited_noise,
    inner,
    l2_norm,
)
from gkdv_lab.ground_state import ground_state, scaling_generator
from gkdv_lab.linop import (
    EigenPairs,
    LinearizedOperator,
    LinopError,
    apply_L,
    coercivity_ratio,
    dense_matrix,
    project_orthogonal,
    spectrum_of_L,
)

GRID = GridSpec(length=100.0, n_points=2048)


@pytest.fixture(scope="module")
def gs():
    return ground_state(5, 1.0, GRID)


@pytest.fixture(scope="module")
def op(gs):
    return LinearizedOperator(gs)


@pytest.fixture(scope="module")
def pairs(op) -> EigenPairs:
    return spectrum_of_L(op, k=3)


class TestAlgebraicIdentities:
    def test_negative_direction(self, gs, op):
        cubed = Field(GRID, gs.q.values**3)
        lhs = apply_L(op, cubed).values
        assert np.max(np.abs(lhs + 8.0 * cubed.values)) < 1e-8

    def test_kernel_contains_q_deriv(self, gs, op):
        ker = apply_L(op, gs.q_deriv).values
        assert np.max(np.abs(ker)) < 1e-8

    def test_dilation_identity(self, gs, op):
        lam = scaling_generator(gs)
        lhs = apply_L(op, lam).values
        assert np.max(np.abs(lhs + 2.0 * gs.q.values)) < 1e-8

    def test_generator_orthogonal_to_q(self, gs):
        assert abs(inner(scaling_generator(gs), gs.q)) < 1e-8


class TestDenseMatrix:
    def test_symmetric(self, op):
        mat = dense_matrix(op)
        assert np.max(np.abs(mat - mat.T)) == 0.0

    def test_consistent_with_apply(self, gs, op):
        rng = np.random.default_rng(0)
        f = band_limited_noise(GRID, rng)
        via_matrix = dense_matrix(op) @ f.values
        direct = apply_L(op, f).values
        assert np.max(np.abs(via_matrix - direct)) < 1e-9

    def test_resolution_cap(self):
        big = ground_state(5, 1.0, GridSpec(length=100.0, n_points=8192))
        with pytest.raises(LinopError):
            dense_matrix(LinearizedOperator(big))


class TestSpectrum:
    def test_bottom_eigenvalue(self, pairs):
        assert pairs.values[0] == pytest.approx(-8.0, abs=1e-5)

    def test_kernel_eigenvalue(self, pairs):
        assert pairs.values[1] == pytest.approx(0.0, abs=1e-5)

    def test_continuum_edge(self, pairs):
        # third eigenvalue sits at the continuum threshold c = 1 (up to the
        # box's smallest nonzero wavenumber squared)
        assert pairs.values[2] >= 0.9

    def test_ground_eigenfunction_is_q_cubed(self, gs, pairs):
        cubed = gs.q.values**3
        cubed = cubed / l2_norm(Field(GRID, cubed))
        overlap = abs(inner(pairs.functions[0], Field(GRID, cubed)))
        assert overlap >= 1.0 - 1e-6

    def test_kernel_eigenfunction_is_q_deriv(self, gs, pairs):
        qy = gs.q_deriv.values / l2_norm(gs.q_deriv)
        overlap = abs(inner(pairs.functions[1], Field(GRID, qy)))
        assert overlap >= 1.0 - 1e-6

    def test_eigen_residuals(self, pairs):
        assert np.all(pairs.residuals < 1e-6)

    def test_unit_norms(self, pairs):
        for phi in pairs.functions:
            assert l2_norm(phi) == pytest.approx(1.0, rel=1e-12)

    def test_resolution_stability(self, op, pairs):
        coarse = ground_state(5, 1.0, GridSpec(length=100.0, n_points=1024))
        coarse_pairs = spectrum_of_L(LinearizedOperator(coarse), k=3)
        # lowest two eigenvalues move by < 1e-6 when n_points doubles
        assert np.max(np.abs(coarse_pairs.values[:2] - pairs.values[:2])) < 1e-6
        assert abs(coarse_pairs.values[2] - pairs.values[2]) < 1e-4


class TestProjection:
    def test_removes_components(self, gs):
        rng = np.random.default_rng(1)
        f = band_limited_noise(GRID, rng)
        cubed = Field(GRID, gs.q.values**3)
        out = project_orthogonal(f, [cubed, gs.q_deriv])
        assert abs(inner(out, cubed)) < 1e-12 * l2_norm(f)
        assert abs(inner(out, gs.q_deriv)) < 1e-12 * l2_norm(f)

    def test_idempotent_on_orthogonal_input(self, gs):
        rng = np.random.default_rng(2)
        f = band_limited_noise(GRID, rng)
        cubed = Field(GRID, gs.q.values**3)
        once = project_orthogonal(f, [cubed, gs.q_deriv])
        twice = project_orthogonal(once, [cubed, gs.q_deriv])
        assert np.max(np.abs(once.values - twice.values)) < 1e-12

    def test_degenerate_basis_rejected(self, gs):
        with pytest.raises(LinopError):
            project_orthogonal(gs.q, [gs.q, gs.q])

    def test_empty_basis_is_identity(self, gs):
        out = project_orthogonal(gs.q, [])
        assert np.array_equal(out.values, gs.q.values)


class TestCoercivity:
    def test_negative_on_q_cubed(self, gs, op):
        cubed = Field(GRID, gs.q.values**3)
        assert coercivity_ratio(op, cubed) == pytest.approx(-8.0, abs=1e-6)

    def test_thousand_projected_fields(self, gs, op):
        # (L f, f) >= ||f||^2 whenever f is orthogonal to Q^3 and Q_y
        rng = np.random.default_rng(2024)
        cubed = Field(GRID, gs.q.values**3)
        worst = np.inf
        for _ in range(1000):
            f = band_limited_noise(GRID, rng)
            f = project_orthogonal(f, [cubed, gs.q_deriv])
            worst = min(worst, coercivity_ratio(op, f))
        assert worst >= 1.0 - 1e-6

    def test_null_field_rejected(self, op):
        with pytest.raises(LinopError):
            coercivity_ratio(op, Field(GRID, np.zeros(GRID.n_points)))
