"""Sampling of initial probability measures with bounded L2 support,
ensemble evolution, and the statistical energy inequality check.

An ensemble of M fields at a common time is the empirical stand-in for a
time-parametrized probability measure on divergence-free L2 fields: every
observable downstream is an equal-weight sample mean over members, reduced
in ascending member order for run-to-run determinism.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .nse_solver import BlowUpError, SolverConfig, Trajectory, run
from .parallel import parallel_map
from .spectral_field import (
    ConfigurationError,
    Grid,
    VelocityField,
    energy,
    h1_seminorm_sq,
    read_snapshot,
    write_snapshot,
)

BASE_FLOWS = ("taylor_green", "shear")


def taylor_green(grid: Grid, time: float = 0.0, nu: float = 0.0) -> VelocityField:
    """Classical Taylor-Green vortex (single-shell, divergence-free)."""
    x = grid.coords()
    if grid.dim == 2:
        comps = np.stack([np.cos(x[0]) * np.sin(x[1]),
                          -np.sin(x[0]) * np.cos(x[1])])
    else:
        comps = np.stack([np.sin(x[0]) * np.cos(x[1]) * np.cos(x[2]),
                          -np.cos(x[0]) * np.sin(x[1]) * np.cos(x[2]),
                          np.zeros(grid.shape)])
    return VelocityField(grid, comps, time, nu)


def shear_flow(grid: Grid, time: float = 0.0, nu: float = 0.0) -> VelocityField:
    """Unidirectional shear u = (sin y, 0, ...): a single decaying mode."""
    x = grid.coords()
    comps = np.zeros((grid.dim,) + grid.shape)
    comps[0] = np.sin(x[1])
    return VelocityField(grid, comps, time, nu)


def base_flow(name: str, grid: Grid) -> VelocityField:
    if name == "taylor_green":
        return taylor_green(grid)
    if name == "shear":
        return shear_flow(grid)
    raise ConfigurationError(f"unknown base flow {name!r}")


@dataclass(frozen=True)
class MeasureSpec:
    """Parameters of the initial measure.

    kind 'random_fourier' draws solenoidal random-phase Fourier modes with
    per-shell energy amplitude * kappa**(-spectrum_slope) over the band
    [k_min, k_max]; kind 'perturbed_base' adds perturbation_amp times such a
    draw to a named base flow. Draws whose L2 norm exceeds support_radius are
    rescaled onto the ball (bounded support).
    """

    kind: str = "random_fourier"
    spectrum_slope: float = 5.0 / 3.0
    k_min: int = 1
    k_max: int = 8
    base: str | None = None
    perturbation_amp: float = 0.0
    support_radius: float = 10.0
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random_fourier", "perturbed_base"):
            raise ConfigurationError(f"unknown measure kind {self.kind!r}")
        if self.support_radius <= 0:
            raise ConfigurationError("support_radius must be positive")
        if self.k_min < 1:
            raise ConfigurationError("k_min must be >= 1")
        if self.k_max < self.k_min:
            raise ConfigurationError("k_max must be >= k_min")
        if self.kind == "perturbed_base" and self.base not in BASE_FLOWS:
            raise ConfigurationError(
                f"perturbed_base requires base in {BASE_FLOWS}")


@dataclass
class Ensemble:
    """M member fields at a common time: the empirical measure (1/M) sum of
    point masses at the members."""

    members: list
    spec: MeasureSpec | None = None
    member_seeds: list | None = None

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("ensemble needs at least one member")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def grid(self) -> Grid:
        return self.members[0].grid

    @property
    def time(self) -> float:
        return self.members[0].time

    @property
    def nu(self) -> float:
        return self.members[0].nu

    def mean_energy(self) -> float:
        return float(np.mean([energy(m).value for m in self.members]))

    def validate(self, tol: float = 1e-10) -> None:
        g, t, nu = self.grid, self.time, self.nu
        for i, m in enumerate(self.members):
            if m.grid != g or abs(m.time - t) > 1e-12 or m.nu != nu:
                raise ConfigurationError(
                    f"member {i} disagrees on grid/time/nu")
            if not m.is_divergence_free(tol):
                raise ConfigurationError(f"member {i} is not divergence-free")
        if self.spec is not None:
            r = self.spec.support_radius
            for i, m in enumerate(self.members):
                if np.sqrt(energy(m).value) > r * (1 + 1e-12):
                    raise ConfigurationError(
                        f"member {i} exceeds the support radius {r}")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _band_mode_pairs(grid: Grid, k_min: int, k_max: int) -> list:
    """Representatives of conjugate mode pairs with k_min <= |k| <= k_max,
    in a fixed lexicographic order (first nonzero component positive)."""
    rng = range(-k_max, k_max + 1)
    reps = []
    if grid.dim == 2:
        candidates = ((a, b) for a in rng for b in rng)
    else:
        candidates = ((a, b, c) for a in rng for b in rng for c in rng)
    for k in candidates:
        mag2 = sum(c * c for c in k)
        if not k_min ** 2 <= mag2 <= k_max ** 2:
            continue
        lead = next(c for c in k if c != 0)
        if lead > 0:
            reps.append(k)
    reps.sort()
    return reps


def _random_solenoidal_hat(grid: Grid, spec: MeasureSpec, member: int,
                           amplitude: float) -> np.ndarray:
    """One solenoidal random-phase draw in spectral space.

    Per-mode coefficients are isotropic complex Gaussians projected
    perpendicular to k, then renormalized so each integer shell kappa
    carries exactly amplitude * kappa**(-slope) of int |u|^2 dx. The Philox
    generator is keyed on (seed, member), and modes are consumed in a fixed
    order, so generation is reproducible and parallel-safe.
    """
    reps = _band_mode_pairs(grid, spec.k_min, spec.k_max)
    gen = np.random.Generator(np.random.Philox(key=[spec.seed, member]))
    draws = (gen.standard_normal((len(reps), grid.dim))
             + 1j * gen.standard_normal((len(reps), grid.dim)))

    shells = np.array([round(np.sqrt(sum(c * c for c in k))) for k in reps])
    counts = np.zeros(shells.max() + 1)
    for s in shells:
        counts[s] += 2.0  # each representative stands for a +/-k pair

    hat = np.zeros((grid.dim,) + grid.shape, dtype=np.complex128)
    vol = grid.volume
    for idx, k in enumerate(reps):
        kvec = np.array(k, dtype=np.float64)
        khat = kvec / np.linalg.norm(kvec)
        v = draws[idx]
        v = v - khat * (khat @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-14:
            # measure-zero degenerate draw; pick any perpendicular direction
            v = np.zeros(grid.dim, dtype=np.complex128)
            v[int(np.argmin(np.abs(khat)))] = 1.0
            v = v - khat * (khat @ v)
            norm = np.linalg.norm(v)
        kappa = shells[idx]
        target = np.sqrt(amplitude * kappa ** (-spec.spectrum_slope)
                         / (vol * counts[kappa]))
        v = v * (target / norm)
        pos = tuple(c % grid.n for c in k)
        neg = tuple((-c) % grid.n for c in k)
        for c in range(grid.dim):
            hat[(c,) + pos] = v[c]
            hat[(c,) + neg] = np.conj(v[c])
    return hat


def sample_member(spec: MeasureSpec, member: int, grid: Grid,
                  nu: float = 0.0) -> VelocityField:
    """Draw member `member` of the measure; reproducible from (seed, index)."""
    if spec.k_max > grid.n // 3:
        raise ConfigurationError(
            f"spectrum band k_max={spec.k_max} exceeds the dealias cut "
            f"n/3={grid.n // 3}")
    if spec.kind == "perturbed_base":
        fld = base_flow(spec.base, grid)
        comps = np.array(fld.components)
        if spec.perturbation_amp != 0.0:
            hat = _random_solenoidal_hat(grid, spec, member, amplitude=1.0)
            from .spectral_field import inverse_fft
            comps = comps + spec.perturbation_amp * inverse_fft(grid, hat)
        fld = VelocityField(grid, comps, 0.0, nu)
    else:
        hat = _random_solenoidal_hat(grid, spec, member, spec.amplitude)
        fld = VelocityField.from_hat(grid, hat, 0.0, nu)
    norm = np.sqrt(energy(fld).value)
    if norm > spec.support_radius:
        fld = VelocityField(grid, fld.components * (spec.support_radius / norm),
                            0.0, nu)
    return fld


def sample_initial(spec: MeasureSpec, m: int, grid: Grid, nu: float = 0.0,
                   threads: int = 1) -> Ensemble:
    """Draw M independent members of the initial measure."""
    if m < 1:
        raise ConfigurationError("ensemble size must be >= 1")
    members = parallel_map(
        lambda i: sample_member(spec, i, grid, nu), range(m), threads)
    ens = Ensemble(members, spec=spec,
                   member_seeds=[(spec.seed, i) for i in range(m)])
    ens.validate()
    return ens


def shell_spectrum(fld: VelocityField) -> tuple:
    """Angle-averaged shell spectrum: (kappa, int |u|^2 per integer shell)."""
    grid = fld.grid
    kmag = np.sqrt(grid.cached("k_sq"))
    shells = np.rint(kmag).astype(int).ravel()
    e_mode = grid.volume * np.sum(np.abs(fld.hat) ** 2, axis=0).ravel()
    e_shell = np.bincount(shells, weights=e_mode)
    return np.arange(len(e_shell)), e_shell


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

def evolve_trajectories(ens: Ensemble, config: SolverConfig, sample_times,
                        probes: list | None = None,
                        threads: int = 1) -> tuple:
    """Run every member and return (ensembles at sample_times, trajectories).

    Member order is preserved; a solver blow-up is re-raised with the member
    index attached.
    """
    sample_times = [float(t) for t in sample_times]
    if any(b <= a for a, b in zip(sample_times, sample_times[1:])):
        raise ConfigurationError("sample_times must be strictly increasing")
    if sample_times and (sample_times[0] < -1e-12
                         or sample_times[-1] > config.t_end + 1e-12):
        raise ConfigurationError("sample_times must lie within [0, t_end]")

    def one(indexed) -> Trajectory:
        i, member = indexed
        try:
            return run(member.with_nu(config.nu), config, probes=probes,
                       snapshot_times=sample_times)
        except BlowUpError as exc:
            raise BlowUpError(exc.time, exc.reason, member=i) from exc

    trajs = parallel_map(one, enumerate(ens.members), threads)
    ensembles = []
    for j in range(len(trajs[0].snapshots)):
        ensembles.append(Ensemble([tr.snapshots[j] for tr in trajs],
                                  spec=ens.spec, member_seeds=ens.member_seeds))
    return ensembles, trajs


def evolve(ens: Ensemble, config: SolverConfig, sample_times,
           threads: int = 1) -> list:
    """Push the ensemble forward; returns one Ensemble per sample time."""
    ensembles, _ = evolve_trajectories(ens, config, sample_times,
                                       threads=threads)
    return ensembles


# ---------------------------------------------------------------------------
# Statistical energy inequality
# ---------------------------------------------------------------------------

@dataclass
class EnergyCheckResult:
    times: np.ndarray
    orders: np.ndarray
    defects: np.ndarray          # (K, T) signed; positive means violation
    initial_moments: np.ndarray  # (K,)
    worst_signed: float
    worst_relative: float


def statistical_energy_check(ensembles: list, k_max: int = 2) -> EnergyCheckResult:
    """Check the mean energy inequality for psi(s) = s^k, k = 1..k_max:

        mean ||u(t)||^(2k) + 2 nu k int_0^t mean ||u||^(2(k-1)) |u|_H1^2 ds
            <= mean ||u(0)||^(2k),

    with trapezoid quadrature in time over the sampled ensembles. For smooth
    unforced solutions this holds with equality, so the signed defect should
    sit at the quadrature-error level.
    """
    times = np.array([e.time for e in ensembles])
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("ensembles must be strictly time-ordered")
    nu = ensembles[0].nu
    m = ensembles[0].size
    e_arr = np.array([[energy(mem).value for mem in e.members]
                      for e in ensembles])            # (T, M)
    h_arr = np.array([[h1_seminorm_sq(mem).value for mem in e.members]
                      for e in ensembles])            # (T, M)

    orders = np.arange(1, k_max + 1)
    defects = np.zeros((k_max, len(times)))
    initial = np.zeros(k_max)
    for j, k in enumerate(orders):
        moment = np.mean(e_arr ** k, axis=1)          # (T,)
        integrand = np.mean(e_arr ** (k - 1) * h_arr, axis=1)
        integral = np.concatenate(
            [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1])
                              * np.diff(times))])
        defects[j] = moment + 2.0 * nu * k * integral - moment[0]
        initial[j] = moment[0]
    worst = float(defects.max())
    scale = np.where(initial > 0, initial, 1.0)
    worst_rel = float((defects / scale[:, None]).max())
    return EnergyCheckResult(times, orders, defects, initial, worst, worst_rel)


# ---------------------------------------------------------------------------
# Persistence: manifest JSON plus NSF1 member snapshots
# ---------------------------------------------------------------------------

def write_ensemble(ens: Ensemble, out_dir, provenance: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, member in enumerate(ens.members):
        name = f"member_{i:04d}.nsf"
        write_snapshot(member, os.path.join(out_dir, name))
        files.append(name)
    manifest = {
        "dim": ens.grid.dim,
        "n": ens.grid.n,
        "nu": ens.nu,
        "time": ens.time,
        "spec": asdict(ens.spec) if ens.spec is not None else None,
        "member_files": files,
        "seed": ens.spec.seed if ens.spec is not None else None,
    }
    if provenance:
        manifest["provenance"] = provenance
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_ensemble(in_dir) -> Ensemble:
    with open(os.path.join(in_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    members = [read_snapshot(os.path.join(in_dir, name))
               for name in manifest["member_files"]]
    spec = MeasureSpec(**manifest["spec"]) if manifest["spec"] else None
    return Ensemble(members, spec=spec)
