"""Correlation observables: pairings, two-point correlations, the increment
modulus, weak-form moment residuals, the divergence constraint and the
finite-difference gradient representation."""

import numpy as np
import pytest

from nse_stat.correlation import (
    PolyWindow,
    SpatialTestField,
    dc_curve,
    dc_modulus,
    divergence_constraint_residual,
    fk_residual,
    gradient_two_point,
    mean_h1_seminorm_sq,
    pair_observable,
    two_point_correlation,
)
from nse_stat.ensemble import (
    Ensemble,
    MeasureSpec,
    evolve,
    sample_initial,
    shear_flow,
    taylor_green,
)
from nse_stat.nse_solver import SolverConfig
from nse_stat.spectral_field import (
    ConfigurationError,
    Grid,
    VelocityField,
    h1_seminorm_sq,
    random_field,
)
from oracles import dc_sin_field_oracle, fd_gradient_scalar


@pytest.fixture(scope="module")
def shear_singleton():
    return Ensemble([shear_flow(Grid(2, 64))])


class TestPairObservable:
    def test_energy_observable(self):
        ens = Ensemble([taylor_green(Grid(2, 32))])
        val = pair_observable(ens, lambda x, xi: np.sum(xi * xi, axis=0))
        assert val == pytest.approx(2 * np.pi ** 2, rel=1e-12)

    def test_unit_observable_gives_volume(self):
        g = Grid(2, 16)
        ens = sample_initial(MeasureSpec(seed=1, k_max=5), 3, g)
        val = pair_observable(ens, lambda x, xi: np.ones(g.shape))
        assert val == pytest.approx((2 * np.pi) ** 2, rel=1e-13)

    def test_two_point_diagonal_consistency(self):
        ens = Ensemble([taylor_green(Grid(2, 32))])
        val = pair_observable(ens,
                              lambda x1, x2, a, b: np.sum(a * b, axis=0),
                              k=2, separation=(0.0, 0.0))
        assert val == pytest.approx(2 * np.pi ** 2, rel=1e-12)

    def test_marginal_consistency_is_exact(self):
        # a two-point observable ignoring the second point equals the
        # one-point pairing exactly (same sample mean)
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=2, k_max=8), 4, g)
        g1 = pair_observable(ens, lambda x, xi: xi[0] ** 2 + x[1] * 0)
        g2 = pair_observable(ens, lambda x1, x2, a, b: a[0] ** 2, k=2,
                             separation=(0.7, -0.3))
        assert g1 == g2


class TestTwoPointCorrelation:
    def test_zero_offset_is_mean_energy(self, shear_singleton):
        st = two_point_correlation(shear_singleton, [(0.0, 0.0)])
        assert st.values[0] == pytest.approx(2 * np.pi ** 2, rel=1e-12)

    def test_half_period_anticorrelation(self, shear_singleton):
        st = two_point_correlation(shear_singleton, [(0.0, np.pi)])
        assert st.values[0] == pytest.approx(-2 * np.pi ** 2, rel=1e-12)

    def test_cauchy_schwarz(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=3, k_max=8), 4, g)
        offs = [(0.0, 0.0)] + [(0.3 * i, 0.21 * i) for i in range(1, 9)]
        st = two_point_correlation(ens, offs)
        e0 = st.values[np.argmin(np.linalg.norm(st.separations, axis=1))]
        assert np.all(np.abs(st.values) <= e0 * (1 + 1e-12))

    def test_symmetry_under_offset_negation(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=4, k_max=8), 2, g)
        h = np.array([0.37, -0.91])
        a = two_point_correlation(ens, [h]).values[0]
        b = two_point_correlation(ens, [-h]).values[0]
        assert a == pytest.approx(b, rel=1e-10)

    def test_separations_sorted(self):
        ens = Ensemble([taylor_green(Grid(2, 16))])
        st = two_point_correlation(ens, [(1.0, 0.0), (0.1, 0.0), (0.5, 0.0)])
        mags = np.linalg.norm(st.separations, axis=1)
        assert np.all(np.diff(mags) >= 0)


class TestDCModulus:
    def test_zero_ensemble(self):
        ens = Ensemble([VelocityField.zero(Grid(2, 32))])
        for r in (0.1, 1.0, np.pi):
            assert dc_modulus(ens, r) == 0.0

    def test_matches_brute_force_oracle(self):
        # lattice-offset rule vs dense polar quadrature of the closed form;
        # the rule carries O(dx/r) boundary discreteness, so use a grid fine
        # enough for the stated tolerance
        ens = Ensemble([shear_flow(Grid(2, 128))])
        for r in (0.5, 0.7, 1.2):
            val = dc_modulus(ens, r)
            ref = dc_sin_field_oracle(r)
            assert abs(val - ref) / ref <= 0.01

    def test_small_r_low_discrepancy_rule(self, shear_singleton):
        # below 8 lattice offsets the 32-point spiral takes over
        g = shear_singleton.grid
        r = 1.4 * g.dx
        val = dc_modulus(shear_singleton, r)
        ref = dc_sin_field_oracle(r)
        assert abs(val - ref) / ref <= 0.02

    def test_taylor_bound_for_small_r(self):
        g = Grid(2, 64)
        ens = sample_initial(MeasureSpec(seed=5, k_max=4), 3, g)
        h1 = np.mean([h1_seminorm_sq(m).value for m in ens.members])
        for r in (0.1, 0.2):
            assert dc_modulus(ens, r) <= r ** 2 * h1 * 1.05

    def test_scaling_in_field_amplitude(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=6, k_max=8), 2, g)
        lam = 3.5
        scaled = Ensemble([VelocityField(g, lam * m.components)
                           for m in ens.members])
        r = 0.8
        assert dc_modulus(scaled, r) == pytest.approx(
            lam ** 2 * dc_modulus(ens, r), rel=1e-12)

    def test_nondecreasing_in_r(self):
        g = Grid(2, 64)
        ens = sample_initial(MeasureSpec(seed=7, k_max=6), 2, g)
        rs = np.geomspace(0.15, np.pi, 12)
        vals = dc_curve(ens, rs)
        assert np.all(np.diff(vals) >= -1e-12 * vals.max())

    def test_curve_matches_pointwise(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=8, k_max=8), 2, g)
        rs = np.array([0.3, 0.9, 2.0])
        curve = dc_curve(ens, rs)
        for r, v in zip(rs, curve):
            assert v == pytest.approx(dc_modulus(ens, float(r)), rel=1e-12)

    def test_p4_modulus_positive_and_bounded(self, shear_singleton):
        v4 = dc_modulus(shear_singleton, 0.8, p=4)
        assert v4 > 0

    def test_domain_error(self, shear_singleton):
        with pytest.raises(ConfigurationError):
            dc_modulus(shear_singleton, 3.5)
        with pytest.raises(ConfigurationError):
            dc_modulus(shear_singleton, 0.0)


@pytest.fixture(scope="module")
def shear_run():
    g = Grid(2, 16)
    ens = Ensemble([shear_flow(g)])
    cfg = SolverConfig(nu=0.1, t_end=1.0, dt=1e-3)
    times = list(np.linspace(0.0, 1.0, 401))
    return evolve(ens, cfg, times), g


class TestFKResidual:
    def test_zero_ensemble_all_terms_zero(self):
        g = Grid(2, 16)
        enss = [Ensemble([VelocityField.zero(g, time=t, nu=0.1)])
                for t in (0.0, 0.5, 1.0)]
        gf = SpatialTestField.from_sine_mode(g, (0, 1), 0)
        res = fk_residual(enss, 1, PolyWindow(1.0), gf)
        assert all(v == 0.0 for v in res.terms.values())

    def test_shear_analytic_first_order(self, shear_run):
        enss, g = shear_run
        gf = SpatialTestField.from_sine_mode(g, (0, 1), 0)
        res = fk_residual(enss, 1, PolyWindow(1.0), gf)
        assert res.terms["advection"] == 0.0
        assert res.relative <= 1e-6

    def test_shear_analytic_second_order(self, shear_run):
        enss, g = shear_run
        gf = SpatialTestField.from_sine_mode(g, (0, 1), 0)
        res = fk_residual(enss, 2, PolyWindow(1.0), (gf, gf))
        assert res.relative <= 1e-6

    def test_richardson_refinement(self, shear_run):
        enss, g = shear_run
        gf = SpatialTestField.from_sine_mode(g, (0, 1), 0)
        fine = fk_residual(enss, 1, PolyWindow(1.0), gf)
        mid = fk_residual(enss[::2], 1, PolyWindow(1.0), gf)
        coarse = fk_residual(enss[::4], 1, PolyWindow(1.0), gf)
        assert coarse.relative / mid.relative >= 3.5
        assert mid.relative / fine.relative >= 3.5

    def test_constant_test_function_exact_zero(self, shear_run):
        enss, g = shear_run
        const = np.zeros((2,) + g.shape)
        const[0] = 1.0
        cf = SpatialTestField(VelocityField(g, const), "const")
        res = fk_residual(enss, 1, PolyWindow(1.0), cf)
        assert abs(res.residual) <= 1e-14

    def test_window_must_vanish_at_final_time(self, shear_run):
        enss, g = shear_run
        gf = SpatialTestField.from_sine_mode(g, (0, 1), 0)
        with pytest.raises(ConfigurationError):
            fk_residual(enss, 1, PolyWindow(2.0), gf)  # theta(1) != 0

    def test_non_divergence_free_factor_rejected(self):
        g = Grid(2, 16)
        x = g.coords()
        bad = VelocityField(g, np.stack([np.sin(x[0]), np.zeros(g.shape)]))
        with pytest.raises(ConfigurationError):
            SpatialTestField(bad)


class TestDivergenceConstraint:
    def test_one_point(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=9, k_max=8), 3, g)
        x = g.cached("coords")
        psi = np.cos(x[0]) + np.sin(2 * x[1])
        assert divergence_constraint_residual(ens, [psi]) <= 1e-10

    def test_two_point_with_quadratic_weight(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=10, k_max=8), 3, g)
        x = g.cached("coords")
        psi = np.cos(x[0])
        weight = shear_flow(g).components
        res = divergence_constraint_residual(
            ens, [psi], [(lambda u: u, weight)])
        assert res <= 1e-10
        res_sq = divergence_constraint_residual(
            ens, [psi], [(lambda u: u * np.sqrt(np.sum(u * u, axis=0)),
                          weight)])
        assert res_sq <= 1e-10

    def test_two_point_double_gradient(self):
        g = Grid(2, 32)
        ens = sample_initial(MeasureSpec(seed=11, k_max=8), 2, g)
        x = g.cached("coords")
        assert divergence_constraint_residual(
            ens, [np.cos(x[0]), np.sin(x[1])]) <= 1e-10

    def test_detector_flags_non_divergence_free(self):
        g = Grid(2, 32)
        x = g.cached("coords")
        bad = Ensemble([VelocityField(
            g, np.stack([np.sin(x[0]), np.zeros(g.shape)]))])
        psi = np.cos(x[0])
        # closed form: int sin(x) d/dx(cos x) dx dy = -2 pi^2, scale 8 pi
        res = divergence_constraint_residual(bad, [psi])
        assert res > 1e-3


class TestGradientRepresentation:
    def test_zero_ensemble(self):
        ens = Ensemble([VelocityField.zero(Grid(2, 32))])
        vals = gradient_two_point(ens, [0.4, 0.2])
        assert np.all(vals == 0.0)

    def test_sin_field_analytic(self):
        ens = Ensemble([shear_flow(Grid(2, 64))])
        hs = np.array([0.8, 0.4, 0.2])
        vals = gradient_two_point(ens, hs)
        expect = 2 * np.pi ** 2 * (2 - 2 * np.cos(hs)) / hs ** 2
        assert np.allclose(vals, expect, rtol=1e-10)

    def test_converges_to_mean_h1(self):
        g = Grid(2, 128)
        members = [random_field(g, seed=s, band=(2, 8), divergence_free=True)
                   for s in (21, 22, 23)]
        ens = Ensemble(members)
        hs = 2 * np.pi / g.n * np.array([8.0, 4.0, 2.0, 1.0])
        vals = gradient_two_point(ens, hs)
        h1 = mean_h1_seminorm_sq(ens)
        gaps = np.abs(vals - h1)
        assert np.all(np.diff(gaps) < 0)
        assert gaps[-1] <= 0.05 * h1
