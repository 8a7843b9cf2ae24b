"""Empirical correlation-marginal observables.

Every operation here is an equal-weight mean over ensemble members of a
spatial quadrature, i.e. a sample estimate of a duality pairing between the
k-point correlation marginal and a test observable. Includes two-point
correlations, the diagonal-continuity modulus, weak-form residuals of the
moment (Friedman-Keller) hierarchy for k = 1, 2, the divergence-constraint
residual, and the finite-difference representation of mean gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble
from .increments import (
    TwoPointSpectrum,
    lattice_distance_order,
    trace_autocorrelation,
    vogel_ball_offsets,
)
from .spectral_field import (
    ConfigurationError,
    Grid,
    VelocityField,
    gradient_components,
    inverse_fft,
    leray_project,
    shifted_components,
)

MIN_LATTICE_OFFSETS = 8
VOGEL_OFFSETS = 32


@dataclass
class TwoPointStat:
    """Values of a two-point observable on a list of separations."""

    separations: np.ndarray   # (Q, d) offsets or (Q,) radii
    values: np.ndarray
    time: float
    observable: str
    time_integrated: bool = False

    def __post_init__(self):
        self.separations = np.asarray(self.separations, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.observable}: non-finite values")
        mags = (np.abs(self.separations) if self.separations.ndim == 1
                else np.linalg.norm(self.separations, axis=1))
        order = np.argsort(mags, kind="stable")
        self.separations = self.separations[order]
        self.values = self.values[order]


# ---------------------------------------------------------------------------
# Duality pairings
# ---------------------------------------------------------------------------

def pair_observable(ens: Ensemble, g, k: int = 1, separation=None) -> float:
    """Sample mean of the spatial quadrature of a test observable.

    For k = 1, ``g(x, xi)`` is evaluated with coordinate arrays x of shape
    (d, n, ...) and member values xi of the same shape. For k = 2 the second
    point is x + separation (wrapped to the torus) and
    ``g(x1, x2, xi1, xi2)`` is integrated over the single base point x1.
    """
    grid = ens.grid
    coords = grid.cached("coords")
    cv = grid.cell_volume
    if k == 1:
        vals = [cv * float(np.sum(g(coords, m.components)))
                for m in ens.members]
    elif k == 2:
        if separation is None:
            raise ConfigurationError("k=2 pairing needs a separation offset")
        offset = np.asarray(separation, dtype=np.float64)
        coords2 = np.mod(coords + offset.reshape((-1,) + (1,) * grid.dim),
                         2.0 * np.pi)
        vals = []
        for m in ens.members:
            shifted = shifted_components(m, offset[None, :])[0]
            vals.append(cv * float(np.sum(g(coords, coords2,
                                            m.components, shifted))))
    else:
        raise ConfigurationError("pairings are implemented for k <= 2")
    return float(np.mean(vals))


def two_point_correlation(ens: Ensemble, offsets) -> TwoPointStat:
    """Mean int u(x) . u(x+h) dx per offset h (exact spectral evaluation)."""
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
    acc = np.zeros(offsets.shape[0])
    for m in ens.members:
        acc += TwoPointSpectrum(m).trace_at(offsets)
    return TwoPointStat(offsets, acc / ens.size, ens.time,
                        "two_point_correlation")


# ---------------------------------------------------------------------------
# Diagonal-continuity modulus
# ---------------------------------------------------------------------------

def _lattice_offsets_in_ball(grid: Grid, r: float):
    dist, order = lattice_distance_order(grid)
    count = int(np.searchsorted(dist, r, side="left"))
    return dist, order, count


def dc_modulus(ens: Ensemble, r: float, p: int = 2) -> float:
    """Averaged p-th power of increments over balls of radius r:

        (1/M) sum_m int_D avg_{|l| < r} |u_m(x) - u_m(x+l)|^p dl dx.

    The ball average uses all lattice offsets with |l| < r when at least 8
    exist, otherwise 32 deterministic low-discrepancy offsets with exact
    spectral shifts.
    """
    grid = ens.grid
    if not 0.0 < r <= np.pi:
        raise ConfigurationError(f"r must lie in (0, pi], got {r}")
    dist, order, count = _lattice_offsets_in_ball(grid, r)
    if count >= MIN_LATTICE_OFFSETS and p == 2:
        vals = []
        for m in ens.members:
            a = trace_autocorrelation(m).ravel()[order[:count]]
            vals.append(2.0 * (a[0] - float(np.mean(a))))
        return float(np.mean(vals))
    if count >= MIN_LATTICE_OFFSETS:
        # integer index offsets, applied with np.roll (exact lattice shifts)
        flat = order[:count]
        idx = np.array(np.unravel_index(flat, grid.shape)).T
        idx = np.where(idx > grid.n // 2, idx - grid.n, idx)
        cv = grid.cell_volume
        vals = []
        for m in ens.members:
            u = m.components
            total = 0.0
            for off in idx:
                rolled = np.roll(u, shift=tuple(-off), axis=tuple(
                    range(1, grid.dim + 1)))
                diff2 = np.sum((rolled - u) ** 2, axis=0)
                total += cv * float(np.sum(diff2 ** (p / 2.0)))
            vals.append(total / count)
        return float(np.mean(vals))
    offsets = vogel_ball_offsets(grid, r, VOGEL_OFFSETS)
    cv = grid.cell_volume
    vals = []
    for m in ens.members:
        shifted = shifted_components(m, offsets)
        diff2 = np.sum((shifted - m.components[None]) ** 2, axis=1)
        vals.append(cv * float(np.mean(np.sum(diff2 ** (p / 2.0),
                                              axis=tuple(range(1, grid.dim + 1))))))
    return float(np.mean(vals))


def dc_curve(ens: Ensemble, r_values, p: int = 2) -> np.ndarray:
    """dc_modulus on a grid of radii; the p = 2 lattice path shares one FFT
    autocorrelation per member across all radii."""
    r_values = np.atleast_1d(np.asarray(r_values, dtype=np.float64))
    if np.any(r_values <= 0) or np.any(r_values > np.pi):
        raise ConfigurationError("radii must lie in (0, pi]")
    grid = ens.grid
    out = np.zeros(r_values.size)
    if p == 2:
        dist, order, _ = _lattice_offsets_in_ball(grid, np.pi)
        counts = np.searchsorted(dist, r_values, side="left")
        lattice_ok = counts >= MIN_LATTICE_OFFSETS
        if np.any(lattice_ok):
            for m in ens.members:
                a = trace_autocorrelation(m).ravel()[order]
                csum = np.cumsum(a)
                for i, (c, ok) in enumerate(zip(counts, lattice_ok)):
                    if ok:
                        out[i] += 2.0 * (a[0] - csum[c - 1] / c)
            out[lattice_ok] /= ens.size
        for i, ok in enumerate(lattice_ok):
            if not ok:
                out[i] = dc_modulus(ens, float(r_values[i]), p)
        return out
    return np.array([dc_modulus(ens, float(r), p) for r in r_values])


# ---------------------------------------------------------------------------
# Weak-form residuals of the moment hierarchy (k = 1, 2)
# ---------------------------------------------------------------------------

class PolyWindow:
    """Time window theta(t) = (1 - t/t_end)^power, vanishing at t_end."""

    def __init__(self, t_end: float, power: int = 2):
        if t_end <= 0 or power < 1:
            raise ConfigurationError("PolyWindow needs t_end > 0, power >= 1")
        self.t_end = float(t_end)
        self.power = int(power)

    def __call__(self, t):
        s = np.clip(1.0 - np.asarray(t) / self.t_end, 0.0, None)
        return s ** self.power

    def derivative(self, t):
        s = np.clip(1.0 - np.asarray(t) / self.t_end, 0.0, None)
        return -self.power / self.t_end * s ** (self.power - 1)

    def describe(self) -> str:
        return f"(1 - t/{self.t_end:g})^{self.power}"


class SpatialTestField:
    """Divergence-free spatial test factor with precomputed derivatives.

    Doubles as a solver probe: `evaluate` returns the three weak-form
    integrals (int u.g, int u.[(u.grad)g], int u.lap g), each exact grid
    quadratures for band-limited u and g.
    """

    def __init__(self, fld: VelocityField, label: str = "g"):
        if not fld.is_divergence_free(1e-8):
            raise ConfigurationError(
                "spatial test factors must be divergence-free")
        grid = fld.grid
        self.grid = grid
        self.label = label
        self.g = fld.components
        self.grad = gradient_components(fld)          # [i, j] = d_j g_i
        ksq = grid.cached("k_sq")
        self.lapl = inverse_fft(grid, -ksq * fld.hat)

    @classmethod
    def from_sine_mode(cls, grid: Grid, kvec, component: int = 0,
                       label: str | None = None) -> "SpatialTestField":
        """sin(k.x) in one component, Leray-projected onto the test space."""
        x = grid.cached("coords")
        phase = sum(kvec[j] * x[j] for j in range(grid.dim))
        comps = np.zeros((grid.dim,) + grid.shape)
        comps[component] = np.sin(phase)
        fld = leray_project(VelocityField(grid, comps))
        if label is None:
            label = f"P[sin({tuple(kvec)}.x) e{component}]"
        return cls(fld, label)

    def evaluate(self, u: np.ndarray, hat, grid: Grid) -> tuple:
        cv = grid.cell_volume
        s1 = cv * float(np.sum(u * self.g))
        advected = np.einsum("k...,ik...->i...", u, self.grad)  # (u.grad)g
        s2 = cv * float(np.sum(u * advected))
        s3 = cv * float(np.sum(u * self.lapl))
        return (s1, s2, s3)


@dataclass
class FKResidual:
    """Assembled terms of one weak moment equation.

    The residual is the signed sum of the terms; pressure contributions
    vanish identically because the test factors are divergence-free, and the
    entry is kept at 0 to make that explicit.
    """

    k: int
    test_function: str
    terms: dict
    residual: float
    scale: float

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else 0.0


def _trapz(times: np.ndarray, series: np.ndarray) -> float:
    return float(np.trapezoid(series, times))


def assemble_fk_terms(times: np.ndarray, window, series_a: np.ndarray,
                      nu: float, k: int,
                      series_b: np.ndarray | None = None,
                      viscous: bool = True) -> dict:
    """Weak-form terms from per-member probe series.

    series_* have shape (M, T, 3) holding (int u.g, int u.[(u.grad)g],
    int u.lap g) per member and time; for k = 2 the two spatial factors
    give series_a and series_b and the moment is their member-wise product.
    """
    theta = window(times)
    dtheta = window.derivative(times)
    if abs(window(times[-1])) > 1e-12 * (1.0 + abs(window(0.0))):
        raise ConfigurationError(
            "the time window must vanish at the final time")
    if k == 1:
        m_mom = series_a[:, :, 0]
        m_adv = series_a[:, :, 1]
        m_visc = series_a[:, :, 2]
    elif k == 2:
        m_mom = series_a[:, :, 0] * series_b[:, :, 0]
        m_adv = (series_a[:, :, 1] * series_b[:, :, 0]
                 + series_a[:, :, 0] * series_b[:, :, 1])
        m_visc = (series_a[:, :, 2] * series_b[:, :, 0]
                  + series_a[:, :, 0] * series_b[:, :, 2])
    else:
        raise ConfigurationError("moment equations are assembled for k <= 2")
    mom = np.mean(m_mom, axis=0)
    adv = np.mean(m_adv, axis=0)
    vis = np.mean(m_visc, axis=0)
    terms = {
        "time_derivative": _trapz(times, dtheta * mom),
        "initial": float(window(0.0) * mom[0]),
        "advection": _trapz(times, theta * adv),
        "viscous": (nu * _trapz(times, theta * vis)) if viscous else 0.0,
        "pressure": 0.0,
    }
    return terms


def _series_from_ensembles(ensembles: list, factor: SpatialTestField) -> np.ndarray:
    m = ensembles[0].size
    grid = ensembles[0].grid
    out = np.empty((m, len(ensembles), 3))
    for j, ens in enumerate(ensembles):
        for i, member in enumerate(ens.members):
            out[i, j] = factor.evaluate(member.components, None, grid)
    return out


def fk_residual(ensembles: list, k: int, window, spatial_factors,
                nu: float | None = None, viscous: bool = True) -> FKResidual:
    """Residual of the k-th weak moment equation on sampled ensembles.

    spatial_factors is one SpatialTestField for k = 1 or a pair for k = 2;
    the space-time test function is window(t) times their tensor product.
    Time integrals use the trapezoid rule over the ensemble times, so the
    residual is dominated by that quadrature error and shrinks at second
    order under snapshot refinement.
    """
    times = np.array([e.time for e in ensembles])
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("ensembles must be strictly time-ordered")
    if nu is None:
        nu = ensembles[0].nu
    if k == 1:
        factors = [spatial_factors] if isinstance(
            spatial_factors, SpatialTestField) else list(spatial_factors)
    else:
        factors = list(spatial_factors)
    if len(factors) != k:
        raise ConfigurationError(f"k={k} needs {k} spatial factors")
    series_a = _series_from_ensembles(ensembles, factors[0])
    series_b = (_series_from_ensembles(ensembles, factors[1])
                if k == 2 else None)
    terms = assemble_fk_terms(times, window, series_a, nu, k,
                              series_b=series_b, viscous=viscous)
    residual = sum(terms.values())
    scale = max(abs(v) for v in terms.values())
    label = " x ".join(f.label for f in factors)
    return FKResidual(k=k, test_function=f"{window.describe()} * {label}",
                      terms=terms, residual=residual, scale=scale)


def fk_residual_from_trajectories(trajs: list, k: int, window,
                                  probe_indices, nu: float,
                                  viscous: bool = True,
                                  labels: str = "") -> FKResidual:
    """Same assembly from the time-dense probe series recorded during the
    solve (one row per accepted step), for quadrature-floor studies."""
    times = trajs[0].step_times
    if k == 1:
        idx = [probe_indices] if np.isscalar(probe_indices) else list(probe_indices)
    else:
        idx = list(probe_indices)
    series_a = np.stack([t.probe_series[idx[0]] for t in trajs])
    series_b = (np.stack([t.probe_series[idx[1]] for t in trajs])
                if k == 2 else None)
    terms = assemble_fk_terms(times, window, series_a, nu, k,
                              series_b=series_b, viscous=viscous)
    residual = sum(terms.values())
    scale = max(abs(v) for v in terms.values())
    return FKResidual(k=k, test_function=f"{window.describe()} * {labels}",
                      terms=terms, residual=residual, scale=scale)


# ---------------------------------------------------------------------------
# Divergence constraint
# ---------------------------------------------------------------------------

def divergence_constraint_residual(ens: Ensemble, psi_factors,
                                   alpha_factors=()) -> float:
    """Relative residual of the divergence constraint on separable tests.

    psi_factors: scalar grid arrays for the slots hit by a gradient (the
    moment in those slots pairs with grad psi). alpha_factors: pairs
    (alpha, weight) for the remaining slots, where alpha maps member
    components to a vector array and weight is a vector grid array; the slot
    contributes int alpha(u) . weight dx. Implemented for k <= 2 total slots.
    The value is normalized by the same product with all integrands replaced
    by their absolute values.
    """
    grid = ens.grid
    ell = len(psi_factors)
    k = ell + len(alpha_factors)
    if not 1 <= ell <= k <= 2:
        raise ConfigurationError("implemented for 1 <= ell <= k <= 2")
    cv = grid.cell_volume
    kd = grid.cached("k_deriv")
    grads = []
    for psi in psi_factors:
        psi = np.asarray(psi, dtype=np.float64)
        psi_hat = np.fft.fftn(psi) / grid.n ** grid.dim
        grad = np.stack([
            np.fft.ifftn(1j * kd[j] * psi_hat * grid.n ** grid.dim).real
            for j in range(grid.dim)])
        grads.append(grad)

    num_vals, den_vals = [], []
    for m in ens.members:
        u = m.components
        num, den = 1.0, 1.0
        for grad in grads:
            num *= cv * float(np.sum(u * grad))
            den *= cv * float(np.sum(np.abs(u * grad)))
        for alpha, weight in alpha_factors:
            a = alpha(u)
            num *= cv * float(np.sum(a * weight))
            den *= cv * float(np.sum(np.abs(a * weight)))
        num_vals.append(num)
        den_vals.append(den)
    scale = float(np.mean(den_vals))
    if scale == 0.0:
        return 0.0
    return float(abs(np.mean(num_vals)) / scale)


# ---------------------------------------------------------------------------
# Finite-difference representation of mean gradients
# ---------------------------------------------------------------------------

def gradient_two_point(ens: Ensemble, h_list) -> np.ndarray:
    """G(h) = h^{-2} sum_j mean_m int |u_m(x + h e_j) - u_m(x)|^2 dx.

    Converges to the mean H1 seminorm squared as h -> 0 (first order for
    the dyadic ladders used in verification).
    """
    h_list = np.atleast_1d(np.asarray(h_list, dtype=np.float64))
    if np.any(h_list <= 0):
        raise ConfigurationError("h values must be positive")
    grid = ens.grid
    offsets = np.zeros((h_list.size * grid.dim, grid.dim))
    for j in range(grid.dim):
        offsets[j * h_list.size:(j + 1) * h_list.size, j] = h_list
    acc = np.zeros(offsets.shape[0])
    corr0 = 0.0
    for m in ens.members:
        tps = TwoPointSpectrum(m)
        acc += tps.trace_at(offsets)
        corr0 += tps.corr0
    acc /= ens.size
    corr0 /= ens.size
    g = np.zeros(h_list.size)
    for j in range(grid.dim):
        block = acc[j * h_list.size:(j + 1) * h_list.size]
        g += 2.0 * (corr0 - block)
    return g / h_list ** 2


def mean_h1_seminorm_sq(ens: Ensemble) -> float:
    return float(np.mean([TwoPointSpectrum(m).h1 for m in ens.members]))
