"""Weight, cutoff, and virial diagnostics.

Frozen constants below come from independent oracles: 30-digit arithmetic
for the closed-form tail integral and the cutoff-selection root, adaptive
quadrature on the closed-form profile for the smallness gaps.
"""

import math

import numpy as np
import pytest

from gkdv_lab.evolve import EvolverConfig, evolve
from gkdv_lab.functionals import (
    FunctionalSeries,
    SmallnessReport,
    WeightConfig,
    cutoff_phi_A,
    energy_linearization_check,
    functional_K,
    kappa,
    monotonicity_I,
    psi,
    psi1,
    psi3,
    right_tail_mass,
    select_cutoff_scale,
    smallness_comparisons,
    virial_J,
)
from gkdv_lab.grid import (
    Field,
    GridSpec,
    band_limited_noise,
    fit_log_slope,
    h1_norm,
    inner,
    l2_norm,
)
from gkdv_lab.ground_state import ground_state
from gkdv_lab.modulation import modulated_trajectory

GRID = GridSpec(length=100.0, n_points=2048)

# Independent-oracle values (30-digit arithmetic / adaptive quadrature).
TAIL_Q2_BEYOND_10 = 3.5700227962682209e-9
A_STAR_N10 = 69.676774123652373
KAPPA_P5 = 2.9770427870720697
PAIRING_N10 = 0.05153834646641582
GAP_ENERGY_PAIRING_N10 = 0.003956919623981432
GAP_ENERGY_MASS_N10 = 0.006533836947302189


@pytest.fixture(scope="module")
def gs():
    return ground_state(5, 1.0, GRID)


@pytest.fixture(scope="module")
def eps0(gs):
    ints = gs.integrals
    r = -ints.int_q4 / ints.int_q6
    q = gs.q.values
    return Field(GRID, (q + r * q**3) / 10.0)


@pytest.fixture(scope="module")
def run_mt(gs, eps0):
    """One perturbed trajectory to one time unit, fully fitted."""
    cfg = EvolverConfig(p=5, dt=5e-4, t_max=1.0, snapshot_stride=20)
    traj = evolve(Field(GRID, gs.q.values + eps0.values), cfg)
    mt = modulated_trajectory(traj, gs, eps_stride=1)
    assert mt.n_fit == len(traj)
    return traj, mt


def _x_of_t(mt):
    t_fit = mt.t_fit
    x_fit = mt.x[: mt.n_fit]
    return lambda tq: float(np.interp(tq, t_fit, x_fit))


class TestPsi:
    def test_half_at_origin(self):
        assert psi(0.0, 4.0) == pytest.approx(0.5, abs=1e-15)

    def test_saturation(self):
        for m in (4.0, 7.5):
            assert psi(-50.0 * m, m) <= 1e-20
            assert psi(50.0 * m, m) >= 1.0 - 1e-20

    def test_bracket_and_strictly_increasing(self):
        for m in (4.0, 7.5):
            x = np.linspace(-20.0 * m, 20.0 * m, 10001)
            v = psi(x, m)
            assert np.all(v > 0.0) and np.all(v < 1.0)
            assert np.all(np.diff(v) > 0.0)

    def test_far_field_is_finite(self):
        assert psi(-1e6, 4.0) == 0.0
        assert psi(1e6, 4.0) == 1.0
        assert psi1(1e6, 4.0) == 0.0
        assert psi3(-1e6, 4.0) == 0.0

    def test_first_derivative_matches_difference(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-30.0, 30.0, 50)
        for m in (4.0, 7.5):
            h = 1e-5 * m
            fd = (psi(pts + h, m) - psi(pts - h, m)) / (2.0 * h)
            assert np.max(np.abs(fd - psi1(pts, m)) / psi1(pts, m)) < 1e-7

    def test_third_derivative_matches_difference(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-30.0, 30.0, 50)
        for m in (4.0, 7.5):
            h = 1e-3 * m
            fd = (psi1(pts + h, m) - 2.0 * psi1(pts, m) + psi1(pts - h, m)) / h**2
            scaled = np.abs(fd - psi3(pts, m)) / psi1(pts, m) * m**2
            assert np.max(scaled) < 5e-6

    def test_third_derivative_bound(self):
        for m in (4.0, 6.0):
            x = np.linspace(-40.0 * m, 40.0 * m, 10000)
            assert np.all(np.abs(psi3(x, m)) <= psi1(x, m) / m**2 * (1 + 1e-12))

    def test_positive_derivative(self):
        x = np.linspace(-120.0, 120.0, 5000)
        assert np.all(psi1(x, 4.0) > 0.0)


class TestCutoff:
    def test_plateaus_exact(self):
        for a in (1.0, 4.0, 16.5):
            y = np.linspace(-3.0 * a, 3.0 * a, 4001)
            v = cutoff_phi_A(y, a)
            assert np.all(v[y <= a] == 1.0)
            assert np.all(v[y >= 2.0 * a] == 0.0)
            assert cutoff_phi_A(a, a) == 1.0
            assert cutoff_phi_A(2.0 * a, a) == 0.0

    def test_monotone_and_bounded(self):
        a = 4.0
        y = np.linspace(-3.0 * a, 3.0 * a, 8001)
        v = cutoff_phi_A(y, a)
        assert v.min() >= 0.0 and v.max() <= 1.0
        # Decrease near the seams is below roundoff; allow machine noise.
        assert np.all(np.diff(v) <= 4.0 * np.finfo(float).eps)
        inner_band = (y > 1.05 * a) & (y < 1.95 * a)
        assert np.all(np.diff(v[inner_band]) < 0.0)

    def test_flat_to_all_orders_at_seams(self):
        assert cutoff_phi_A(1.05, 1.0) >= 1.0 - 1e-7
        assert cutoff_phi_A(1.98, 1.0) <= 1e-20

    def test_chain_rule_slope(self):
        base = np.linspace(0.9, 2.1, 20001)
        sup1 = np.max(np.abs(np.diff(cutoff_phi_A(base, 1.0))) / np.diff(base))
        for a in (4.0, 16.0):
            ya = base * a
            sup_a = np.max(np.abs(np.diff(cutoff_phi_A(ya, a))) / np.diff(ya))
            assert sup_a <= sup1 / a * (1 + 1e-9)

    def test_infinite_scale_is_identity(self):
        y = np.linspace(-50.0, 50.0, 101)
        assert np.all(cutoff_phi_A(y, math.inf) == 1.0)

    def test_rejects_small_scale(self):
        with pytest.raises(ValueError, match=">= 1"):
            cutoff_phi_A(0.0, 0.5)


class TestWeightConfig:
    def test_defaults_valid(self):
        cfg = WeightConfig()
        assert cfg.m == 4.0 and cfg.x0 == 10.0 and cfg.a is None

    def test_validation(self):
        with pytest.raises(ValueError, match="m must be"):
            WeightConfig(m=3.0)
        with pytest.raises(ValueError, match="x0 must be"):
            WeightConfig(x0=0.0)
        with pytest.raises(ValueError, match="a must be"):
            WeightConfig(a=0.5)
        assert WeightConfig(a=math.inf).a == math.inf

    def test_series_validation(self):
        with pytest.raises(ValueError, match="aligned"):
            FunctionalSeries(np.arange(3.0), np.arange(4.0), "bad")
        with pytest.raises(ValueError, match="finite"):
            FunctionalSeries(np.arange(3.0), np.array([0.0, np.nan, 1.0]), "bad")
        assert len(FunctionalSeries(np.arange(3.0), np.ones(3), "ok")) == 3


class TestMonotonicityI:
    def test_zero_defect_at_anchor(self, run_mt):
        traj, mt = run_mt
        cfg = WeightConfig(m=4.0, x0=5.0)
        x_fn = _x_of_t(mt)
        t0 = float(traj.times[60])
        anchor = monotonicity_I(traj, x_fn, cfg, t0, t0)
        assert anchor - monotonicity_I(traj, x_fn, cfg, t0, t0) == 0.0

    def test_time_validation(self, run_mt):
        traj, mt = run_mt
        cfg = WeightConfig(m=4.0, x0=5.0)
        x_fn = _x_of_t(mt)
        with pytest.raises(ValueError, match="0 <= t <= t0"):
            monotonicity_I(traj, x_fn, cfg, 0.5, 0.2)
        with pytest.raises(ValueError, match="snapshot"):
            monotonicity_I(traj, x_fn, cfg, 0.005, 0.5)
        with pytest.raises(ValueError, match="snapshot"):
            monotonicity_I(traj, x_fn, cfg, 0.5, 2.0)

    def test_single_constant_bounds_defect_grid(self, run_mt):
        """One fitted constant covers the whole (x0, t, t0) grid."""
        traj, mt = run_mt
        x_of_t = _x_of_t(mt)
        m = 4.0
        x0s = np.linspace(2.0, 20.0, 10)
        t0_idx = np.linspace(10, 100, 10).astype(int)
        defects = np.zeros((10, 10, 10))
        for i, x0v in enumerate(x0s):
            cfg = WeightConfig(m=m, x0=float(x0v))
            for j, i0 in enumerate(t0_idx):
                t0 = float(traj.times[i0])
                anchor = monotonicity_I(traj, x_of_t, cfg, t0, t0)
                t_idx = np.linspace(0, i0, 10).astype(int)
                for k, it in enumerate(t_idx):
                    tv = float(traj.times[it])
                    defects[i, j, k] = anchor - monotonicity_I(traj, x_of_t, cfg, tv, t0)
        theta = float(np.max(defects * np.exp(x0s / m)[:, None, None]))
        assert 0.0 < theta <= 5.0
        assert np.all(defects <= theta * np.exp(-x0s / m)[:, None, None] + 1e-15)
        # The defect envelope decays at the weight's own rate.
        defmax = defects.reshape(len(x0s), -1).max(axis=1)
        slope = fit_log_slope(x0s, np.clip(defmax, 1e-300, None))
        assert -1.2 / m <= slope <= -0.8 / m


class TestRightTail:
    def test_profile_tail_value(self, gs):
        val = right_tail_mass(gs.q, 0.0, 10.0)
        assert val <= 1e-8
        assert val == pytest.approx(TAIL_Q2_BEYOND_10, rel=0.1)

    def test_zero_field(self, gs):
        assert right_tail_mass(Field(GRID, np.zeros(GRID.n_points)), 0.0, 5.0) == 0.0

    def test_monotone_in_offset(self, gs):
        vals = [right_tail_mass(gs.q, 0.0, x0) for x0 in (1.0, 2.0, 4.0, 8.0)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_rejects_nonpositive_offset(self, gs):
        with pytest.raises(ValueError, match="positive"):
            right_tail_mass(gs.q, 0.0, 0.0)

    def test_tail_slopes_along_run(self, run_mt):
        """One-sided: measured decay at least 70% of the guaranteed rate.

        The offsets stop at 6 because wrapped radiation floors the tail
        near 5e-8 further out on this box.
        """
        traj, mt = run_mt
        m = 4.0
        i = 25
        x_of_t = _x_of_t(mt)
        center = x_of_t(float(traj.times[i]))
        x0s = np.linspace(1.0, 6.0, 8)
        tails_u = np.array(
            [right_tail_mass(traj[i].u, center, float(v)) for v in x0s])
        assert fit_log_slope(x0s, tails_u) <= -0.7 / m
        tails_e = np.array(
            [right_tail_mass(mt.stored[i], 0.0, float(v)) for v in x0s])
        assert fit_log_slope(x0s, tails_e) <= -0.7 / (2.0 * m)


class TestVirialJ:
    def test_zero_remainder(self, gs):
        assert virial_J(Field(GRID, np.zeros(GRID.n_points)), gs, 4.0) == 0.0

    def test_pairing_bound(self, gs):
        """|J_a| <= c (1 + sqrt(a)) ||eps||_2 with the Cauchy-Schwarz constant
        c = max(||F||_2 restricted to y <= 0, sqrt(2) sup|F|)."""
        fvals = gs.f_primitive.values
        left = math.sqrt(float(np.sum(np.where(gs.y <= 0, fvals**2, 0.0))
                               * GRID.spacing))
        c_star = max(left, math.sqrt(2.0) * float(np.max(np.abs(fvals))))
        assert c_star < 3.0
        rng = np.random.default_rng(7)
        for a in (1.0, 4.0, 16.0, 64.0):
            for _ in range(10):
                f = Field(GRID, rng.standard_normal(GRID.n_points))
                bound = c_star * (1.0 + math.sqrt(a)) * l2_norm(f)
                assert abs(virial_J(f, gs, a)) <= bound * (1 + 1e-12)

    def test_truncation_error_collapses(self, gs, eps0):
        ref = virial_J(eps0, gs, math.inf)
        gaps = [abs(virial_J(eps0, gs, a) - ref) for a in (4.0, 8.0, 16.0)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 2e-10

    def test_grid_mismatch(self, gs):
        other = GridSpec(length=100.0, n_points=1024)
        with pytest.raises(ValueError, match="grid"):
            virial_J(Field(other, np.zeros(1024)), gs, 4.0)

    def test_rejects_small_scale(self, gs, eps0):
        with pytest.raises(ValueError, match=">= 1"):
            virial_J(eps0, gs, 0.25)


class TestFunctionalK:
    def test_kappa_value(self, gs):
        assert kappa(gs) == pytest.approx(KAPPA_P5, rel=1e-10)

    def test_series_grows_along_run(self, run_mt, gs, eps0):
        _, mt = run_mt
        pairing = inner(eps0, gs.q)
        series, slope = functional_K(mt, gs, A_STAR_N10)
        assert np.all(np.diff(series.values) > 0.0)
        mean_slope = ((series.values[-1] - series.values[0])
                      / (series.s[-1] - series.s[0]))
        assert mean_slope >= 0.25 * pairing
        assert np.all(slope.values >= 0.25 * pairing)
        assert len(series) == mt.n_fit and len(slope) == mt.n_fit

    def test_norm_bound_along_run(self, run_mt, gs):
        _, mt = run_mt
        fvals = gs.f_primitive.values
        left = math.sqrt(float(np.sum(np.where(gs.y <= 0, fvals**2, 0.0))
                               * GRID.spacing))
        c_star = max(left, math.sqrt(2.0) * float(np.max(np.abs(fvals))))
        series, _ = functional_K(mt, gs, A_STAR_N10)
        caps = math.sqrt(1.5) * (c_star * (1.0 + math.sqrt(A_STAR_N10))
                                 * mt.eps_l2[: mt.n_fit] + kappa(gs))
        assert np.all(np.abs(series.values) <= caps)

    def test_plateau_covers_box_so_truncation_is_inert(self, run_mt, gs):
        """The selected scale exceeds the half box, so the cutoff is 1
        on every node and the truncated and whole series coincide."""
        _, mt = run_mt
        trunc, _ = functional_K(mt, gs, A_STAR_N10)
        whole, _ = functional_K(mt, gs, math.inf)
        assert np.array_equal(trunc.values, whole.values)

    def test_soliton_series_is_flat(self, gs):
        cfg = EvolverConfig(p=5, dt=5e-4, t_max=0.3, snapshot_stride=20)
        traj = evolve(gs.q, cfg)
        mt = modulated_trajectory(traj, gs, eps_stride=1)
        series, slope = functional_K(mt, gs, A_STAR_N10)
        assert np.max(np.abs(series.values + kappa(gs))) <= 1e-8
        assert np.max(np.abs(slope.values)) <= 1e-7

    def test_missing_stored_remainder(self, run_mt, gs):
        traj, _ = run_mt
        sparse = modulated_trajectory(traj, gs, eps_stride=7)
        with pytest.raises(ValueError, match="stored"):
            functional_K(sparse, gs, A_STAR_N10)


class TestEnergyLinearization:
    def test_zero_remainder(self, gs):
        gap = energy_linearization_check(Field(GRID, np.zeros(GRID.n_points)), gs)
        assert gap <= 1e-14

    def test_cubic_profile_direction(self, gs):
        gap = energy_linearization_check(Field(GRID, 0.1 * gs.q.values**3), gs)
        assert gap <= 1e-10

    def test_random_remainders(self, gs):
        rng = np.random.default_rng(11)
        for _ in range(5):
            f = band_limited_noise(GRID, rng)
            f = Field(GRID, f.values * (0.5 / h1_norm(f)))
            assert energy_linearization_check(f, gs) <= 1e-9

    def test_subcritical_power(self):
        gs3 = ground_state(3, 1.0, GRID)
        gap = energy_linearization_check(Field(GRID, 0.1 * gs3.q.values**3), gs3)
        assert gap <= 1e-9


class TestSmallness:
    def test_zero_remainder(self, gs):
        rep = smallness_comparisons(Field(GRID, np.zeros(GRID.n_points)), gs)
        assert rep.m0 == 0.0 and rep.gap_mass == 0.0
        assert rep.gap_energy_pairing == abs(rep.energy0)
        assert rep.ratios == (0.0, 0.0, 0.0)

    def test_mass_gap_identity(self, gs, eps0):
        rep = smallness_comparisons(eps0, gs)
        assert rep.gap_mass == pytest.approx(l2_norm(eps0) ** 2, rel=1e-12)

    def test_frozen_values(self, gs, eps0):
        rep = smallness_comparisons(eps0, gs)
        assert rep.pairing == pytest.approx(PAIRING_N10, rel=1e-12)
        assert rep.gap_energy_pairing == pytest.approx(
            GAP_ENERGY_PAIRING_N10, rel=1e-9)
        assert rep.gap_energy_mass == pytest.approx(GAP_ENERGY_MASS_N10, rel=1e-9)

    def test_quadratic_scaling(self, gs, eps0):
        big = smallness_comparisons(eps0, gs)
        small = smallness_comparisons(Field(GRID, 0.5 * eps0.values), gs)
        for hi, lo in zip(
            (big.gap_mass, big.gap_energy_pairing, big.gap_energy_mass),
            (small.gap_mass, small.gap_energy_pairing, small.gap_energy_mass),
        ):
            assert hi / lo == pytest.approx(4.0, rel=0.1)

    def test_grid_mismatch(self, gs):
        other = GridSpec(length=100.0, n_points=1024)
        with pytest.raises(ValueError, match="grid"):
            smallness_comparisons(Field(other, np.zeros(1024)), gs)


class TestSelectCutoff:
    def test_frozen_root(self):
        assert select_cutoff_scale(4.0, PAIRING_N10) == pytest.approx(
            A_STAR_N10, abs=5e-8)

    def test_root_is_admissible_and_minimal(self):
        a = select_cutoff_scale(4.0, PAIRING_N10)
        target = math.sqrt(PAIRING_N10)

        def excess(av):
            return math.sqrt(av) * math.exp(-av / 16.0) + 1.0 / math.sqrt(av)

        assert excess(a) <= target
        assert excess(0.99 * a) > target

    def test_smaller_pairing_needs_larger_scale(self):
        assert select_cutoff_scale(4.0, 0.01) > select_cutoff_scale(4.0, 0.05)

    def test_huge_pairing_hits_floor(self):
        assert select_cutoff_scale(4.0, 16.0) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            select_cutoff_scale(4.0, 0.0)
        with pytest.raises(ValueError, match=">= 4"):
            select_cutoff_scale(2.0, 0.05)
