"""Time integrator: tendencies, analytic decay benchmarks, energy budget,
convergence order, invariants and persistence."""

import numpy as np
import pytest

from nse_stat.ensemble import shear_flow, taylor_green
from nse_stat.nse_solver import (
    BlowUpError,
    SolverConfig,
    Trajectory,
    advection_term,
    energy_budget,
    load_trajectory,
    rhs_eval,
    run,
    save_trajectory,
    step,
)
from nse_stat.spectral_field import (
    ConfigurationError,
    Grid,
    VelocityField,
    l2_distance,
    random_field,
)
from oracles import fd_advection


class TestRhs:
    def test_shear_has_zero_tendency(self):
        f = shear_flow(Grid(2, 32))
        assert np.abs(rhs_eval(f).components).max() <= 1e-13

    def test_taylor_green_nonlinearity_is_pure_gradient(self):
        f = taylor_green(Grid(2, 64))
        assert np.abs(rhs_eval(f).components).max() <= 1e-12

    def test_advection_matches_finite_differences(self):
        # second-order FD oracle: error drops ~4x per grid refinement
        errs = []
        for n in (32, 64, 128):
            g = Grid(n=n, dim=2)
            f = random_field(g, seed=5, band=(1, 4), divergence_free=True)
            spectral = advection_term(f).components
            fd = fd_advection(f.components, g.dx)
            errs.append(np.abs(spectral - fd).max())
        assert errs[0] / errs[1] > 3.4
        assert errs[1] / errs[2] > 3.4

    def test_rejects_non_divergence_free(self):
        g = Grid(2, 32)
        x = g.coords()
        f = VelocityField(g, np.stack([np.sin(x[0]), np.zeros(g.shape)]))
        with pytest.raises(ConfigurationError):
            rhs_eval(f)


class TestRun:
    def test_zero_initial_data(self):
        g = Grid(2, 16)
        cfg = SolverConfig(nu=0.1, t_end=0.2, dt=0.05)
        traj = run(VelocityField.zero(g), cfg)
        for snap in traj.snapshots:
            assert np.all(snap.components == 0.0)
        assert energy_budget(traj) == 0.0

    def test_taylor_green_analytic(self):
        g = Grid(2, 64)
        nu, t_end = 0.01, 0.5
        cfg = SolverConfig(nu=nu, t_end=t_end, dt=1e-3,
                           snapshot_interval=0.25)
        traj = run(taylor_green(g), cfg)
        exact = VelocityField(
            g, np.exp(-2 * nu * t_end) * taylor_green(g).components)
        assert l2_distance(traj.snapshots[-1], exact) <= 1e-6
        assert energy_budget(traj) <= 1e-6

    def test_shear_analytic(self):
        g = Grid(2, 32)
        nu, t_end = 0.1, 1.0
        cfg = SolverConfig(nu=nu, t_end=t_end, dt=1e-3)
        traj = run(shear_flow(g), cfg)
        exact = VelocityField(g, np.exp(-nu * t_end)
                              * shear_flow(g).components)
        assert l2_distance(traj.snapshots[-1], exact) <= 1e-8
        assert energy_budget(traj) <= 1e-8

    def test_snapshots_divergence_free_and_ordered(self):
        g = Grid(2, 32)
        f = random_field(g, seed=3, band=(1, 8), divergence_free=True)
        cfg = SolverConfig(nu=0.02, t_end=0.3, cfl=0.4,
                           snapshot_interval=0.1)
        traj = run(f, cfg)
        times = traj.times
        assert np.all(np.diff(times) > 0)
        for snap in traj.snapshots:
            assert snap.is_divergence_free(1e-10)

    def test_temporal_convergence_fourth_order(self):
        # self-convergence on a nonlinear flow against a fine-dt reference
        g = Grid(2, 32)
        f = random_field(g, seed=4, band=(1, 4), divergence_free=True)
        f = VelocityField(g, f.components / np.abs(f.components).max())
        nu, t_end = 0.02, 0.25
        ref = run(f, SolverConfig(nu=nu, t_end=t_end, dt=t_end / 1024))
        errs = []
        for steps in (16, 32, 64):
            traj = run(f, SolverConfig(nu=nu, t_end=t_end, dt=t_end / steps))
            errs.append(l2_distance(traj.snapshots[-1], ref.snapshots[-1]))
        assert errs[0] / errs[1] > 10.0
        assert errs[1] / errs[2] > 10.0

    def test_energy_never_increases(self):
        g = Grid(2, 32)
        f = random_field(g, seed=6, band=(1, 8), divergence_free=True)
        cfg = SolverConfig(nu=1e-3, t_end=0.5, cfl=0.4)
        traj = run(f, cfg)
        e = traj.energy_series[:, 1]
        assert np.all(e[1:] <= e[:-1] * (1 + 1e-10))

    def test_momentum_mode_stays_exactly_zero(self):
        g = Grid(2, 32)
        f = random_field(g, seed=7, band=(1, 8), divergence_free=True)
        cfg = SolverConfig(nu=0.01, t_end=0.2, dt=0.01)
        traj = run(f, cfg)
        assert traj.snapshots[-1].mean_mode_magnitude() == 0.0

    def test_determinism(self):
        g = Grid(2, 32)
        f = random_field(g, seed=8, band=(1, 8), divergence_free=True)
        cfg = SolverConfig(nu=0.01, t_end=0.2, cfl=0.3)
        a = run(f, cfg)
        b = run(f, cfg)
        assert np.array_equal(a.snapshots[-1].components,
                              b.snapshots[-1].components)

    def test_blow_up_detection(self):
        g = Grid(2, 32)
        f = random_field(g, seed=9, band=(1, 8), divergence_free=True)
        f = VelocityField(g, f.components * (30.0 / np.sqrt(2.0)
                                             / np.abs(f.components).max()))
        cfg = SolverConfig(nu=0.0, t_end=50.0, dt=5.0)
        with pytest.raises(BlowUpError) as err:
            run(f, cfg)
        assert "t=" in str(err.value)

    def test_step_matches_run(self):
        g = Grid(2, 32)
        f = random_field(g, seed=10, band=(1, 6), divergence_free=True)
        from nse_stat.spectral_field import dealias
        f = dealias(f)
        cfg = SolverConfig(nu=0.05, t_end=0.1, dt=0.05)
        traj = run(f, cfg)
        manual = step(step(f, 0.05, nu=0.05), 0.05, nu=0.05)
        assert np.abs(manual.components
                      - traj.snapshots[-1].components).max() <= 1e-14


class TestEnergyBudget:
    def test_degenerate_input_error(self):
        cfg = SolverConfig(nu=0.1, t_end=0.1, dt=0.1)
        traj = Trajectory(config=cfg)
        traj.energy_series = np.array([[0.0, 0.0, 0.0], [0.1, 0.5, 0.0]])
        with pytest.raises(ValueError):
            energy_budget(traj)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        g = Grid(2, 16)
        f = random_field(g, seed=11, band=(1, 5), divergence_free=True)
        cfg = SolverConfig(nu=0.05, t_end=0.2, dt=0.01,
                           snapshot_interval=0.1)
        traj = run(f, cfg)
        save_trajectory(traj, tmp_path / "traj")
        back = load_trajectory(tmp_path / "traj")
        assert back.config == cfg
        assert len(back.snapshots) == len(traj.snapshots)
        for a, b in zip(traj.snapshots, back.snapshots):
            assert np.array_equal(a.components, b.components)
            assert a.time == b.time
        assert np.array_equal(back.energy_series, traj.energy_series)
