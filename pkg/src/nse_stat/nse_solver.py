"""Deterministic pseudo-spectral time integration of the incompressible
Navier-Stokes equations on the torus.

The semi-discrete system for the Fourier coefficients is

    d/dt uhat = -nu |k|^2 uhat + N(uhat),   N = -P[(u.grad)u]^ (dealiased),

advanced with integrating-factor RK4: the viscous factor exp(-nu |k|^2 dt)
is applied exactly, which removes stiffness and lets the same scheme serve a
viscosity sweep down to small nu. With sharp 2/3-rule dealiasing the
truncated nonlinearity is exactly energy-conserving, so the semi-discrete
energy identity

    E(t) + 2 nu int_0^t |grad u|^2 ds = E(0)

holds up to time-integration and roundoff error; `energy_budget` monitors it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .spectral_field import (
    ConfigurationError,
    Grid,
    VelocityField,
    inverse_fft,
    read_snapshot,
    write_snapshot,
)


class BlowUpError(RuntimeError):
    """Raised when the integration produces NaNs or runaway energy."""

    def __init__(self, time: float, reason: str, member: int | None = None):
        self.time = time
        self.reason = reason
        self.member = member
        who = f"member {member} " if member is not None else ""
        super().__init__(f"blow-up detected {who}at t={time:.6g}: {reason}")


@dataclass(frozen=True)
class SolverConfig:
    """Time integration parameters.

    Exactly one of `dt` (fixed step) or `cfl` (adaptive step
    dt = cfl * dx / max|u|, re-evaluated every step) drives the step size;
    if `dt` is set it wins and `cfl` is ignored.
    """

    nu: float
    t_end: float
    dt: float | None = None
    cfl: float = 0.4
    snapshot_interval: float | None = None
    dealias: bool = True
    integrator: str = "if-rk4"

    def __post_init__(self):
        if self.nu < 0:
            raise ConfigurationError(f"nu must be nonnegative, got {self.nu}")
        if self.t_end < 0:
            raise ConfigurationError(f"t_end must be >= 0, got {self.t_end}")
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.dt is None and not (0 < self.cfl <= 1.0):
            raise ConfigurationError(f"cfl must lie in (0, 1], got {self.cfl}")
        if (self.snapshot_interval is not None and self.dt is not None
                and self.snapshot_interval < self.dt):
            raise ConfigurationError("snapshot_interval must be >= dt")
        if self.integrator != "if-rk4":
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")


@dataclass
class Trajectory:
    """Snapshots plus the per-step energy budget of a single solution.

    energy_series rows are (t, E(t), D(t)) with D the trapezoid-accumulated
    dissipation 2 nu int_0^t |grad u|^2 ds. probe_series holds, per probe and
    per step, the three weak-form integrals recorded by the probe protocol.
    """

    config: SolverConfig
    snapshots: list = field(default_factory=list)
    energy_series: np.ndarray | None = None
    probe_series: np.ndarray | None = None
    probe_labels: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def step_times(self) -> np.ndarray:
        return self.energy_series[:, 0]


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------

def _nonlinear_hat(grid: Grid, hat: np.ndarray, dealias: bool) -> np.ndarray:
    """Spectral coefficients of -P[(u.grad)u], with 2/3-rule truncation."""
    n_d = grid.n ** grid.dim
    axes = tuple(range(1, grid.dim + 1))
    kd = grid.cached("k_deriv")
    u = np.fft.ifftn(hat * n_d, axes=axes).real
    conv = np.zeros_like(u)
    for j in range(grid.dim):
        du_j = np.fft.ifftn(1j * kd[j] * hat * n_d, axes=axes).real
        conv += u[j] * du_j
    conv_hat = np.fft.fftn(conv, axes=axes) / n_d
    if dealias:
        conv_hat *= grid.cached("dealias")
    # Leray projection of the advection term; minus sign for the tendency
    k = grid.cached("k")
    ksq = grid.cached("k_sq")
    ksq_safe = np.where(ksq == 0.0, 1.0, ksq)
    kdotc = np.einsum("c...,c...->...", k, conv_hat)
    conv_hat -= k * (kdotc / ksq_safe)
    zero = (slice(None),) + (0,) * grid.dim
    conv_hat[zero] = 0.0
    return -conv_hat


def rhs_eval(fld: VelocityField, dealias: bool = True) -> VelocityField:
    """Nonlinear tendency -P[(u.grad)u]; the viscous part is handled by the
    integrating factor inside `step` and is not included here."""
    if not fld.is_divergence_free(1e-8):
        raise ConfigurationError(
            "rhs_eval requires a divergence-free input field")
    hat = _nonlinear_hat(fld.grid, fld.hat, dealias)
    return VelocityField.from_hat(fld.grid, hat, fld.time, fld.nu)


def advection_term(fld: VelocityField, dealias: bool = False) -> VelocityField:
    """(u.grad)u evaluated pseudo-spectrally (no projection); test hook for
    comparing against finite-difference oracles."""
    grid = fld.grid
    n_d = grid.n ** grid.dim
    axes = tuple(range(1, grid.dim + 1))
    kd = grid.cached("k_deriv")
    hat = fld.hat
    u = fld.components
    conv = np.zeros_like(u)
    for j in range(grid.dim):
        du_j = np.fft.ifftn(1j * kd[j] * hat * n_d, axes=axes).real
        conv += u[j] * du_j
    out = VelocityField(grid, conv, fld.time, fld.nu)
    if dealias:
        from .spectral_field import dealias as _dealias
        out = _dealias(out)
    return out


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------

def _if_rk4_step(grid: Grid, hat: np.ndarray, dt: float, nu: float,
                 dealias: bool) -> np.ndarray:
    """One integrating-factor RK4 step for d/dt uhat = L uhat + N(uhat)."""
    ksq = grid.cached("k_sq")
    e_half = np.exp(-nu * ksq * (dt / 2.0))
    e_full = e_half * e_half
    n1 = _nonlinear_hat(grid, hat, dealias)
    n2 = _nonlinear_hat(grid, e_half * (hat + (dt / 2.0) * n1), dealias)
    n3 = _nonlinear_hat(grid, e_half * hat + (dt / 2.0) * n2, dealias)
    n4 = _nonlinear_hat(grid, e_full * hat + dt * e_half * n3, dealias)
    return (e_full * hat
            + (dt / 6.0) * (e_full * n1 + 2.0 * e_half * (n2 + n3) + n4))


def step(fld: VelocityField, dt: float, nu: float | None = None,
         dealias: bool = True) -> VelocityField:
    """Advance one IF-RK4 step of size dt."""
    if nu is None:
        nu = fld.nu
    hat = _if_rk4_step(fld.grid, fld.hat, dt, nu, dealias)
    return VelocityField.from_hat(fld.grid, hat, fld.time + dt, nu)


def _snapshot_times(config: SolverConfig,
                    snapshot_times: list | None) -> np.ndarray:
    if snapshot_times is not None:
        times = np.asarray(sorted(float(t) for t in snapshot_times))
        if times.size and (times[0] < -1e-12 or times[-1] > config.t_end + 1e-12):
            raise ConfigurationError("snapshot times must lie in [0, t_end]")
        return times[times > 1e-12]
    if config.snapshot_interval is None:
        return np.array([config.t_end]) if config.t_end > 0 else np.array([])
    m = int(np.floor(config.t_end / config.snapshot_interval + 1e-9))
    times = config.snapshot_interval * np.arange(1, m + 1)
    if times.size == 0 or config.t_end - times[-1] > 1e-9 * max(1.0, config.t_end):
        times = np.append(times, config.t_end)
    return times


def run(u0: VelocityField, config: SolverConfig, probes: list | None = None,
        snapshot_times: list | None = None) -> Trajectory:
    """Integrate from u0 to t_end, storing snapshots and the energy budget.

    Steps are clipped to land exactly on every snapshot time. Each probe must
    expose ``evaluate(components, hat, grid) -> tuple of floats`` and a
    ``label``; its values are recorded at every accepted step, giving
    time-dense series for weak-form quadrature.
    """
    grid = u0.grid
    if not u0.is_divergence_free(1e-8):
        raise ConfigurationError("initial field is not divergence-free")
    nu = config.nu
    vol = grid.volume
    ksq = grid.cached("k_sq")
    # start from the real-space representation so that fields with equal
    # samples produce bit-identical trajectories regardless of cached mirrors
    from .spectral_field import forward_fft
    hat = forward_fft(grid, u0.components)
    if config.dealias:
        hat *= grid.cached("dealias")
    # the state space is mean-free; project out quadrature roundoff once so
    # the zero mode is conserved exactly from here on
    hat[(slice(None),) + (0,) * grid.dim] = 0.0

    events = _snapshot_times(config, snapshot_times)
    want_zero = snapshot_times is not None and any(
        abs(float(t)) <= 1e-12 for t in snapshot_times)

    def make_field(h, t):
        return VelocityField.from_hat(grid, h, time=t, nu=nu)

    def probe_row(h):
        if not probes:
            return None
        u = inverse_fft(grid, h)
        return [p.evaluate(u, h, grid) for p in probes]

    t = 0.0
    e0 = vol * float(np.sum(np.abs(hat) ** 2))
    h1 = vol * float(np.sum(ksq * np.sum(np.abs(hat) ** 2, axis=0)))
    dissip = 0.0
    energy_rows = [(t, e0, dissip)]
    probe_rows = [probe_row(hat)] if probes else None

    traj = Trajectory(config=config)
    if snapshot_times is None or want_zero:
        traj.snapshots.append(make_field(hat, 0.0))

    for t_next in events:
        while t < t_next - 1e-12:
            if config.dt is not None:
                dt = config.dt
            else:
                u = inverse_fft(grid, hat)
                umax = float(np.sqrt(np.sum(u * u, axis=0)).max())
                dt = config.cfl * grid.dx / max(umax, 1e-12)
            dt = min(dt, t_next - t)
            hat = _if_rk4_step(grid, hat, dt, nu, config.dealias)
            t += dt
            if not np.all(np.isfinite(hat)):
                raise BlowUpError(t, "non-finite spectral coefficients")
            e_t = vol * float(np.sum(np.abs(hat) ** 2))
            if e0 > 0 and e_t > 10.0 * e0:
                raise BlowUpError(t, f"energy grew to {e_t:.3g} > 10 E0")
            h1_new = vol * float(np.sum(ksq * np.sum(np.abs(hat) ** 2, axis=0)))
            dissip += 2.0 * nu * 0.5 * (h1 + h1_new) * dt
            h1 = h1_new
            energy_rows.append((t, e_t, dissip))
            if probes:
                probe_rows.append(probe_row(hat))
        traj.snapshots.append(make_field(hat, t_next))

    traj.energy_series = np.array(energy_rows)
    if probes:
        traj.probe_series = np.array(probe_rows).transpose(1, 0, 2)
        traj.probe_labels = [p.label for p in probes]
    return traj


def energy_budget(traj: Trajectory) -> float:
    """Worst relative defect of E(t) + 2 nu int_0^t |grad u|^2 ds = E(0)."""
    series = traj.energy_series
    e0 = series[0, 1]
    defect = np.abs(series[:, 1] + series[:, 2] - e0)
    if e0 == 0.0:
        if defect.max() > 0.0:
            raise ValueError("degenerate trajectory: E(0) = 0 with nonzero defect")
        return 0.0
    return float(defect.max() / e0)


# ---------------------------------------------------------------------------
# Persistence: directory of NSF1 snapshots plus a JSON index
# ---------------------------------------------------------------------------

def save_trajectory(traj: Trajectory, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, snap in enumerate(traj.snapshots):
        name = f"snapshot_{i:05d}.nsf"
        write_snapshot(snap, os.path.join(out_dir, name))
        files.append(name)
    index = {
        "config": asdict(traj.config),
        "times": [float(s.time) for s in traj.snapshots],
        "files": files,
        "energy_series": np.asarray(traj.energy_series).tolist(),
    }
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_trajectory(in_dir) -> Trajectory:
    with open(os.path.join(in_dir, "index.json")) as fh:
        index = json.load(fh)
    config = SolverConfig(**index["config"])
    traj = Trajectory(config=config)
    for name in index["files"]:
        traj.snapshots.append(read_snapshot(os.path.join(in_dir, name)))
    traj.energy_series = np.array(index["energy_series"])
    return traj
