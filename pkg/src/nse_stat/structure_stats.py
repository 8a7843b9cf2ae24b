"""Sphere-averaged structure functions, their a-priori bounds, the weak
anisotropy identity, and scaling-exponent fits.

Structure functions are time-integrated, sphere- and space-averaged moments
of directional velocity increments du = u(.+rn) - u(.):

    S_par^p(tau, r) = int_0^tau < integral avg_n (du.n)^p >         (p = 2, 3)
    S0^3(tau, r)    = int_0^tau < integral avg_n |du|^2 (du.n) >

with < . > the ensemble mean. Both |S0^3/r| and |S_par^3/r| are bounded by
twice the initial mean energy; `bound_check` verifies this on computed
tables. The weak anisotropy identity equates d times the sphere average of
squared longitudinal increments with the ball average of squared increments,
a kinematic consequence of periodicity and incompressibility checked per
field by `weak_anisotropy_residual`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble
from .increments import (
    TwoPointSpectrum,
    increment_moments,
    squared_increment_profiles,
)
from .parallel import parallel_map
from .spectral_field import ConfigurationError, VelocityField

SPHERE_MEASURE = {2: 2.0 * np.pi, 3: 4.0 * np.pi}


@dataclass(frozen=True)
class DirectionSet:
    """Unit directions with uniform weights for sphere averages.

    2D uses equispaced angles (spectrally accurate for smooth integrands);
    3D uses a Fibonacci hemisphere plus antipodes, so odd moments vanish
    identically.
    """

    dim: int
    vectors: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def average(self, values: np.ndarray, axis: int = 0) -> np.ndarray:
        values = np.moveaxis(np.asarray(values), axis, 0)
        return np.tensordot(self.weights, values, axes=1)


def direction_set(dim: int, n_dirs: int) -> DirectionSet:
    if n_dirs < 8 or n_dirs % 2 != 0:
        raise ConfigurationError("n_dirs must be even and >= 8")
    if dim == 2:
        theta = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        vectors = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elif dim == 3:
        vectors = _fibonacci_sphere_symmetric(n_dirs)
    else:
        raise ConfigurationError("directions exist for dim 2 or 3 only")
    weights = np.full(n_dirs, 1.0 / n_dirs)
    return DirectionSet(dim, vectors, weights)


def _fibonacci_sphere_symmetric(n_dirs: int) -> np.ndarray:
    """Fibonacci-spiral latitudes expanded under a symmetry orbit.

    When 8 | n_dirs the orbit contains quarter turns and the equator mirror,
    which cancel the azimuthal harmonics of rank-2 moments exactly, and the
    latitudes are stretched so the uniform-weight quadrature of z^2 is exact:
    second moments of the set are then exact to roundoff. Otherwise plain
    antipodal symmetrization is used. Antipodal balance holds in all cases.
    """
    golden = np.pi * (3.0 - np.sqrt(5.0))
    if n_dirs % 8 == 0:
        q = n_dirs // 8
        j = np.arange(q)
        mid = (j + 0.5) / q
        z = np.sqrt((1.0 / 3.0) / np.mean(mid ** 2)) * mid
        rho = np.sqrt(1.0 - z * z)
        phi = golden * j
        pts = []
        for a in range(4):
            ca = rho * np.cos(phi + a * np.pi / 2.0)
            sa = rho * np.sin(phi + a * np.pi / 2.0)
            pts.append(np.stack([ca, sa, z], axis=1))
            pts.append(np.stack([ca, sa, -z], axis=1))
        return np.concatenate(pts)
    half = n_dirs // 2
    j = np.arange(half)
    z = (j + 0.5) / half
    rho = np.sqrt(1.0 - z * z)
    phi = golden * j
    top = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return np.concatenate([top, -top])


def gauss_legendre_nodes(r: float, n_nodes: int) -> tuple:
    """Gauss-Legendre nodes and weights on [0, r]."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return 0.5 * r * (x + 1.0), 0.5 * r * w


@dataclass
class StructureFunctionTable:
    """Time-integrated structure functions on an (tau, r) grid, plus the
    two-point correlation profiles entering the same budgets."""

    tau: float
    r_grid: np.ndarray
    s_par: dict                  # p -> array over r
    s0_3: np.ndarray
    s_perp_3: np.ndarray
    e0: float
    n_dirs: int
    times: np.ndarray
    # correlation profiles: trace and longitudinal, at tau and at 0, and the
    # time-integrated gradient correlations
    m2_tau: np.ndarray | None = None
    m2_0: np.ndarray | None = None
    m2l_tau: np.ndarray | None = None
    m2l_0: np.ndarray | None = None
    v: np.ndarray | None = None
    v_tilde: np.ndarray | None = None
    # instantaneous (per snapshot) longitudinal moments, for refinements
    s_par_inst: dict | None = None
    s0_3_inst: np.ndarray | None = None


@dataclass
class ScalingFit:
    alpha: float
    zeta: dict
    fit_range: tuple
    r_squared: dict
    she_leveque: dict
    warnings: list = field(default_factory=list)


def she_leveque(p: float) -> float:
    """Intermittency-corrected scaling exponents p/9 + 2(1 - (2/3)^(p/3))."""
    return p / 9.0 + 2.0 * (1.0 - (2.0 / 3.0) ** (p / 3.0))


# ---------------------------------------------------------------------------
# Structure functions
# ---------------------------------------------------------------------------

def structure_functions(ensembles: list, r_grid, dirs: DirectionSet,
                        p_list=(2, 3), tau: float | None = None,
                        with_correlations: bool = True,
                        threads: int = 1) -> StructureFunctionTable:
    """Assemble the structure-function table from time-ordered ensembles.

    Increments are evaluated with exact spectral shifts, sphere averages use
    the direction set, the ensemble mean is an ordered member reduction, and
    the time integral over [0, tau] is a trapezoid over snapshot times (tau
    must be one of them).
    """
    r_grid = np.atleast_1d(np.asarray(r_grid, dtype=np.float64))
    if np.any(r_grid <= 0) or np.any(r_grid > np.pi):
        raise ConfigurationError("r_grid must lie in (0, pi]")
    times = np.array([e.time for e in ensembles])
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("ensembles must be strictly time-ordered")
    if tau is None:
        tau = float(times[-1])
    sel = times <= tau + 1e-12
    times_used = times[sel]
    if abs(times_used[-1] - tau) > 1e-9:
        raise ConfigurationError("tau must coincide with a snapshot time")
    used = [e for e, keep in zip(ensembles, sel) if keep]

    nt, nr = len(used), r_grid.size
    inst_par = {p: np.zeros((nt, nr)) for p in p_list}
    inst_s03 = np.zeros((nt, nr))
    corr = {q: np.zeros((nt, nr)) for q in ("m0", "mpar", "gtrace", "gpar")}

    def member_rows(m):
        mom = increment_moments(m, dirs.vectors, r_grid, p_list=p_list)
        rows = {("spar", p): dirs.average(mom[("spar", p)]) for p in p_list}
        rows["s03"] = dirs.average(mom["s03"])
        if with_correlations:
            prof = TwoPointSpectrum(m).radial_profiles(
                dirs.vectors, r_grid,
                quantities=("m0", "mpar", "gtrace", "gpar"))
            for q in ("m0", "mpar", "gtrace", "gpar"):
                rows[q] = dirs.average(prof[q])
        return rows

    for j, ens in enumerate(used):
        for rows in parallel_map(member_rows, ens.members, threads):
            for p in p_list:
                inst_par[p][j] += rows[("spar", p)]
            inst_s03[j] += rows["s03"]
            if with_correlations:
                for q in corr:
                    corr[q][j] += rows[q]
        for p in p_list:
            inst_par[p][j] /= ens.size
        inst_s03[j] /= ens.size
        for q in corr:
            corr[q][j] /= ens.size

    def t_int(arr):
        return np.trapezoid(arr, times_used, axis=0)

    s_par = {p: t_int(inst_par[p]) for p in p_list}
    s0_3 = t_int(inst_s03)
    s_perp_3 = s0_3 - s_par[3] if 3 in p_list else None
    e0 = used[0].mean_energy()
    table = StructureFunctionTable(
        tau=tau, r_grid=r_grid, s_par=s_par, s0_3=s0_3, s_perp_3=s_perp_3,
        e0=e0, n_dirs=dirs.count, times=times_used,
        s_par_inst=inst_par, s0_3_inst=inst_s03)
    if with_correlations:
        table.m2_tau = corr["m0"][-1]
        table.m2_0 = corr["m0"][0]
        table.m2l_tau = corr["mpar"][-1]
        table.m2l_0 = corr["mpar"][0]
        table.v = t_int(corr["gtrace"])
        table.v_tilde = t_int(corr["gpar"])
    return table


def bound_check(table: StructureFunctionTable, tol: float = 0.05) -> dict:
    """Ratios max_r |S/r| / (2 E0) for the mixed and longitudinal cubic
    structure functions; both must not exceed 1 + tol."""
    if table.e0 == 0.0:
        if np.any(table.s0_3 != 0.0) or np.any(table.s_par[3] != 0.0):
            raise ValueError("E0 = 0 with nonzero cubic structure functions")
        return {"ratio_s03": 0.0, "ratio_spar3": 0.0, "violation": False}
    bound = 2.0 * table.e0
    ratio_s03 = float(np.max(np.abs(table.s0_3 / table.r_grid)) / bound)
    ratio_spar3 = float(np.max(np.abs(table.s_par[3] / table.r_grid)) / bound)
    return {
        "ratio_s03": ratio_s03,
        "ratio_spar3": ratio_spar3,
        "violation": bool(max(ratio_s03, ratio_spar3) > 1.0 + tol),
    }


# ---------------------------------------------------------------------------
# Weak anisotropy
# ---------------------------------------------------------------------------

def weak_anisotropy_residual(target, r: float, dirs: DirectionSet,
                             radial_nodes: int = 16) -> float:
    """Relative defect of the kinematic identity

        d * avg_{|n|=1} int (du_{rn}.n)^2 dx = avg_{|l|<r} int |du_l|^2 dx.

    The ball average uses Gauss-Legendre radial nodes with weight s^(d-1)
    times the direction set; both sides are exact spectral two-point sums,
    so the residual is pure quadrature error and vanishes under refinement.
    The factor d is the surface-to-volume ratio r |bd B_r| / |B_r| of the
    d-ball (3 in three dimensions).
    """
    members = target.members if isinstance(target, Ensemble) else [target]
    if not 0 < r <= np.pi:
        raise ConfigurationError(f"r must lie in (0, pi], got {r}")
    for m in members:
        if not m.is_divergence_free(1e-8):
            raise ConfigurationError(
                "weak anisotropy requires divergence-free input")
    d = members[0].grid.dim
    s_nodes, s_weights = gauss_legendre_nodes(r, radial_nodes)
    lhs = rhs = 0.0
    for m in members:
        tps = TwoPointSpectrum(m)
        sphere = squared_increment_profiles(tps, dirs.vectors, np.array([r]))
        lhs += d * float(dirs.average(sphere["qpar"][:, 0]))
        ball = squared_increment_profiles(tps, dirs.vectors, s_nodes)
        q0_dir = dirs.average(ball["q0"])            # (S,)
        rhs += float(np.sum(s_weights * s_nodes ** (d - 1) * q0_dir)
                     * d / r ** d)
    lhs /= len(members)
    rhs /= len(members)
    denom = max(abs(lhs), abs(rhs))
    if denom == 0.0:
        return 0.0
    return abs(lhs - rhs) / denom


# ---------------------------------------------------------------------------
# Scaling fits
# ---------------------------------------------------------------------------

def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple:
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(slope), r2


def scaling_fit(table: StructureFunctionTable, fit_range: tuple) -> ScalingFit:
    """Least-squares scaling exponents on a log-log grid.

    alpha is the slope of log|S_par^2| against log|S_par^3| (the weak
    scaling exponent); zeta_p the slope of log|S_par^p| against log r. Sign
    changes of S_par^3 inside the range degrade the fit: affected points are
    dropped and a warning is recorded. alpha is reported as a measurement,
    never asserted against a reference value.
    """
    lo, hi = fit_range
    r = table.r_grid
    mask = (r >= lo) & (r <= hi)
    warnings = []
    if np.count_nonzero(mask) < 6:
        raise ConfigurationError(
            "fit_range must contain at least 6 r points")
    zeta, r_squared = {}, {}
    for p, vals in table.s_par.items():
        v = np.abs(vals[mask])
        ok = v > 0
        if not np.all(ok):
            warnings.append(f"S_par^{p}: zero values excluded from fit")
        zeta[p], r_squared[f"zeta_{p}"] = _loglog_fit(r[mask][ok], v[ok])

    s2 = table.s_par[2][mask]
    s3 = table.s_par[3][mask]
    floor = 1e-12 * np.max(np.abs(s3)) if np.any(s3 != 0) else 0.0
    ok = np.abs(s3) > floor
    if np.any(np.diff(np.sign(s3[s3 != 0])) != 0):
        warnings.append("S_par^3 changes sign inside the fit range; "
                        "fit degraded")
    if np.count_nonzero(ok) < 2:
        raise ConfigurationError("not enough usable S_par^3 points for alpha")
    alpha, r2a = _loglog_fit(np.abs(s3[ok]), np.abs(s2[ok]))
    r_squared["alpha"] = r2a
    return ScalingFit(
        alpha=alpha, zeta=zeta, fit_range=(float(lo), float(hi)),
        r_squared=r_squared,
        she_leveque={p: she_leveque(p) for p in sorted(set(list(table.s_par)
                                                           + [2, 3]))},
        warnings=warnings)
