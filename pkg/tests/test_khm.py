"""Two-point correlation budget: bump profiles, budget assembly on analytic
and random ensembles, the cubic rearrangement identity."""

import numpy as np
import pytest

from nse_stat.ensemble import Ensemble, MeasureSpec, evolve, sample_member, shear_flow
from nse_stat.khm import (
    KHMBudget,
    RadialBump,
    TestTensor,
    assemble_khm_budget,
    cubic_identity_check,
    khm_budget,
    khm_integrands,
)
from nse_stat.nse_solver import SolverConfig
from nse_stat.spectral_field import ConfigurationError, Grid, VelocityField
from nse_stat.structure_stats import direction_set
from oracles import khm_shear_terms_oracle


class TestRadialBump:
    def test_value_range_and_support(self):
        b = RadialBump(0.4)
        s = np.linspace(0, 1.0, 101)
        v = b.value(s)
        assert v[0] == pytest.approx(1.0)
        assert np.all(v[s >= 0.4] == 0.0)
        assert np.all(v >= 0)

    def test_derivatives_match_finite_differences(self):
        for bump in (RadialBump(0.4), RadialBump(0.15, center=0.25)):
            s = np.linspace(bump.center - 0.9 * bump.width,
                            bump.center + 0.9 * bump.width, 41)
            s = s[s > 0]
            h = 1e-5
            fd1 = (bump.value(s + h) - bump.value(s - h)) / (2 * h)
            fd2 = (bump.value(s + h) - 2 * bump.value(s)
                   + bump.value(s - h)) / h ** 2
            assert np.abs(bump.d1(s) - fd1).max() <= 1e-5
            assert np.abs(bump.d2(s) - fd2).max() <= 1e-3

    def test_tensor_support_validation(self):
        with pytest.raises(ConfigurationError):
            TestTensor(omega1=RadialBump(3.5))
        with pytest.raises(ConfigurationError):
            TestTensor()


@pytest.fixture(scope="module")
def shear_ensembles():
    g = Grid(2, 64)
    ens = Ensemble([shear_flow(g)])
    cfg = SolverConfig(nu=0.05, t_end=0.5, dt=2e-3)
    return evolve(ens, cfg, list(np.linspace(0.0, 0.5, 21))), g


class TestKHMBudget:
    def test_zero_ensemble(self):
        g = Grid(2, 32)
        enss = [Ensemble([VelocityField.zero(g, time=t, nu=0.1)])
                for t in (0.0, 0.5)]
        budget = khm_budget(enss, TestTensor(omega1=RadialBump(0.4)),
                            form="trace", dirs=direction_set(2, 16),
                            n_radial=8)
        assert all(v == 0.0 for v in budget.terms.values())
        assert budget.residual == 0.0

    def test_shear_terms_against_brute_force(self, shear_ensembles):
        enss, g = shear_ensembles
        bump = RadialBump(0.4)
        tensor = TestTensor(omega1=bump)
        budget = khm_budget(enss, tensor, form="trace",
                            dirs=direction_set(2, 64), n_radial=32)
        ref = khm_shear_terms_oracle(nu=0.05, tau=0.5,
                                     bump_value=bump.value, support=0.4)
        scale = max(abs(v) for v in ref.values())
        for key in ("corr_tau", "corr_0", "viscous"):
            assert abs(budget.terms[key] - ref[key]) <= 0.01 * scale
        assert abs(budget.terms["cubic"] - ref["cubic"]) <= 1e-10 * scale
        assert budget.relative <= 0.01

    def test_forms_share_one_code_path(self, shear_ensembles):
        enss, _ = shear_ensembles
        dirs = direction_set(2, 16)
        bump = RadialBump(0.4)
        trace = khm_budget(enss[:5], TestTensor(omega1=bump), form="trace",
                           dirs=dirs, n_radial=8)
        full1 = khm_budget(enss[:5], TestTensor(omega1=bump), form="full",
                           dirs=dirs, n_radial=8)
        assert trace.terms == full1.terms
        shell = RadialBump(0.1, center=0.2)
        longi = khm_budget(enss[:5], TestTensor(omega2=shell),
                           form="longitudinal", dirs=dirs, n_radial=8)
        full2 = khm_budget(enss[:5], TestTensor(omega2=shell), form="full",
                           dirs=dirs, n_radial=8)
        assert longi.terms == full2.terms

    def test_form_profile_validation(self, shear_ensembles):
        enss, _ = shear_ensembles
        both = TestTensor(omega1=RadialBump(0.4), omega2=RadialBump(0.3))
        with pytest.raises(ConfigurationError):
            khm_budget(enss[:3], both, form="trace",
                       dirs=direction_set(2, 16), n_radial=8)
        with pytest.raises(ConfigurationError):
            khm_budget(enss[:3], both, form="longitudinal",
                       dirs=direction_set(2, 16), n_radial=8)

    def test_viscous_alternative_expression(self, shear_ensembles):
        enss, _ = shear_ensembles
        budget = khm_budget(enss, TestTensor(omega1=RadialBump(0.4)),
                            form="trace", dirs=direction_set(2, 32),
                            n_radial=32)
        gap = abs(budget.terms["viscous"] - budget.terms["viscous_alt"])
        assert gap <= 0.02 * abs(budget.terms["viscous"])

    def test_frozen_pair_ensemble_inviscid(self):
        # time-constant members u and -u: endpoint correlations agree and
        # the cubic term cancels pairwise, so the nu = 0 budget closes
        g = Grid(2, 32)
        u = sample_member(MeasureSpec(seed=17, k_max=8, amplitude=3.0), 0, g)
        members = [u, VelocityField(g, -u.components)]
        enss = [Ensemble([m.with_time(t) for m in members])
                for t in (0.0, 0.4)]
        tensor = TestTensor(omega1=RadialBump(0.4))
        budget = assemble_khm_budget(
            khm_integrands(enss, tensor, direction_set(2, 16), 8),
            tensor, nu=0.0, form="trace")
        scale = abs(budget.terms["corr_tau"])
        assert budget.terms["corr_tau"] == budget.terms["corr_0"]
        assert abs(budget.terms["cubic"]) <= 1e-14 * scale
        assert abs(budget.residual) <= 1e-14 * scale

    def test_term_scaling_degrees(self):
        # quadratic terms scale as lambda^2, the cubic term as lambda^3
        g = Grid(2, 32)
        u = sample_member(MeasureSpec(seed=18, k_max=8, amplitude=2.0), 0, g)
        lam = 1.7
        tensor = TestTensor(omega1=RadialBump(0.4))
        dirs = direction_set(2, 16)

        def budget_for(scale):
            members = [VelocityField(g, scale * u.components, time=t)
                       for t in (0.0,)]
            enss = [Ensemble([VelocityField(g, scale * u.components,
                                            time=t)]) for t in (0.0, 0.3)]
            integ = khm_integrands(enss, tensor, dirs, 8)
            return assemble_khm_budget(integ, tensor, nu=0.01, form="trace")

        b1, b2 = budget_for(1.0), budget_for(lam)
        assert b2.terms["corr_tau"] == pytest.approx(
            lam ** 2 * b1.terms["corr_tau"], rel=1e-12)
        assert b2.terms["viscous"] == pytest.approx(
            lam ** 2 * b1.terms["viscous"], rel=1e-12)
        assert b2.terms["cubic"] == pytest.approx(
            lam ** 3 * b1.terms["cubic"], rel=1e-10)

    def test_random_ensemble_budget_and_refinement(self):
        g = Grid(2, 64)
        from nse_stat.ensemble import sample_initial
        ens = sample_initial(MeasureSpec(seed=19, k_max=8, amplitude=4.0),
                             4, g)
        cfg = SolverConfig(nu=5e-3, t_end=0.3, dt=5e-3)
        enss = evolve(ens, cfg, list(np.linspace(0.0, 0.3, 13)))
        tensor = TestTensor(omega1=RadialBump(0.4))
        integ = khm_integrands(enss, tensor, direction_set(2, 32), 24)
        fine = assemble_khm_budget(integ, tensor, nu=5e-3, form="trace")
        coarse = assemble_khm_budget(integ, tensor, nu=5e-3, form="trace",
                                     time_indices=range(0, 13, 2))
        assert fine.relative <= 0.05
        assert fine.relative < coarse.relative

    def test_report_json_shape(self, shear_ensembles):
        enss, _ = shear_ensembles
        budget = khm_budget(enss[:3], TestTensor(omega1=RadialBump(0.4)),
                            form="trace", dirs=direction_set(2, 16),
                            n_radial=8)
        doc = budget.to_json()
        assert set(doc) == {"form", "omega", "nu", "tau", "terms",
                            "residual", "scale"}


class TestCubicIdentity:
    def test_zero_field(self):
        g = Grid(2, 32)
        ens = Ensemble([VelocityField.zero(g)])
        tensor = TestTensor(omega1=RadialBump(0.4))
        assert cubic_identity_check(ens, tensor, direction_set(2, 16)) == 0.0

    def test_divergence_free_fields_satisfy_identity(self):
        g = Grid(2, 64)
        u = sample_member(MeasureSpec(seed=20, k_max=8, amplitude=3.0), 0, g)
        ens = Ensemble([u])
        tensor = TestTensor(omega1=RadialBump(0.4), omega2=None)
        defect = cubic_identity_check(ens, tensor, direction_set(2, 64), 24)
        assert defect <= 1e-3
        both = TestTensor(omega1=RadialBump(0.4),
                          omega2=RadialBump(0.15, center=0.2))
        defect2 = cubic_identity_check(ens, both, direction_set(2, 64), 40)
        assert defect2 <= 1e-3

    def test_shear_field(self):
        g = Grid(2, 64)
        ens = Ensemble([shear_flow(g)])
        tensor = TestTensor(omega1=RadialBump(0.4))
        defect = cubic_identity_check(ens, tensor, direction_set(2, 64), 24)
        assert defect <= 1e-3

    def test_non_divergence_free_detected(self):
        # generic band-limited noise without projection breaks the identity
        from nse_stat.spectral_field import random_field
        g = Grid(2, 64)
        bad = random_field(g, seed=33, band=(1, 8), divergence_free=False)
        bad = VelocityField(g, bad.components / np.abs(bad.components).max())
        ens = Ensemble([bad])
        tensor = TestTensor(omega1=RadialBump(0.4))
        defect = cubic_identity_check(ens, tensor, direction_set(2, 64), 24)
        assert defect > 1e-2
