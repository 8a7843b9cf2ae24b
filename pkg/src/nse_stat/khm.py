"""Two-point correlation budget (Karman-Howarth-Monin relation) for
ensembles, tested against isotropic rank-2 tensors.

For a compactly supported test tensor sigma(h) = w1(|h|) I + w2(|h|) hh/|h|^2
the budget couples the endpoint two-point correlations, the time integral of
cubic increment moments against grad sigma, and a viscous term against the
Laplacian of sigma:

    [corr at tau] - [corr at 0] + (1/2) int_0^tau <ddd> : grad sigma
        = -nu int_0^tau <dd> : lap sigma,

with d the velocity increment over h. All angular structure is reduced
symbolically: grad sigma and lap sigma contract increments into the radial
profiles already used for structure functions, so the h-integral becomes a
Gauss-Legendre radial sum times a sphere average over the tensor support.
The viscous term has an equivalent gradient-correlation form (reported as
`viscous_alt`) obtained by moving one derivative onto the field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble
from .increments import (
    TwoPointSpectrum,
    cubic_mixed_profiles,
    increment_moments,
)
from .parallel import parallel_map
from .spectral_field import ConfigurationError
from .structure_stats import SPHERE_MEASURE, DirectionSet, gauss_legendre_nodes

FORMS = ("full", "trace", "longitudinal")


@dataclass(frozen=True)
class RadialBump:
    """Closed-form bump exp(1 - 1/(1 - u^2)), u = (s - center)/width.

    Smooth, compactly supported on |u| < 1, with analytic first and second
    derivatives (no numerical differentiation anywhere in the budget).
    center = 0 gives the standard bump on [0, width); center > width gives
    an annulus that vanishes near the origin, which keeps sigma = w2 hh
    twice differentiable at h = 0.
    """

    width: float
    center: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.center < 0:
            raise ConfigurationError("bump needs width > 0 and center >= 0")

    @property
    def support(self) -> float:
        return self.center + self.width

    def _u(self, s):
        return (np.asarray(s, dtype=np.float64) - self.center) / self.width

    def value(self, s):
        u = self._u(s)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0 - 1e-12
        g = 1.0 - u[inside] ** 2
        out[inside] = np.exp(1.0 - 1.0 / g)
        return out

    def d1(self, s):
        u = self._u(s)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0 - 1e-12
        ui = u[inside]
        g = 1.0 - ui ** 2
        w = np.exp(1.0 - 1.0 / g)
        out[inside] = (-2.0 * ui / g ** 2) * w / self.width
        return out

    def d2(self, s):
        u = self._u(s)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0 - 1e-12
        ui = u[inside]
        g = 1.0 - ui ** 2
        w = np.exp(1.0 - 1.0 / g)
        d2u = w * (-2.0 / g ** 2 + 4.0 * ui ** 2 / g ** 4
                   - 8.0 * ui ** 2 / g ** 3)
        out[inside] = d2u / self.width ** 2
        return out


@dataclass(frozen=True)
class TestTensor:
    """sigma(h) = omega1(|h|) I + omega2(|h|) hhat (x) hhat, compactly
    supported strictly inside |h| < pi."""

    omega1: RadialBump | None = None
    omega2: RadialBump | None = None

    def __post_init__(self):
        if self.omega1 is None and self.omega2 is None:
            raise ConfigurationError("at least one radial profile is needed")
        if self.support >= np.pi:
            raise ConfigurationError(
                f"tensor support {self.support:.3f} must stay inside the "
                "half-period pi")

    @property
    def support(self) -> float:
        return max(p.support for p in (self.omega1, self.omega2)
                   if p is not None)

    def describe(self) -> dict:
        def one(p):
            return None if p is None else {"type": "bump", "width": p.width,
                                           "center": p.center,
                                           "support": p.support}
        return {"omega1": one(self.omega1), "omega2": one(self.omega2)}


@dataclass
class KHMBudget:
    """Assembled budget terms; residual = corr_tau - corr_0 + cubic - viscous."""

    form: str
    nu: float
    tau: float
    terms: dict
    residual: float
    scale: float
    tensor: dict

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "form": self.form,
            "omega": self.tensor,
            "nu": self.nu,
            "tau": self.tau,
            "terms": dict(self.terms),
            "residual": self.residual,
            "scale": self.scale,
        }


@dataclass
class KHMIntegrands:
    """Direction-averaged radial integrands per snapshot time.

    Arrays are (n_times, n_radial): cubic moments b0 = <int |d|^2 (d.n)> and
    b1 = <int (d.n)^3>, squared increments q0, qpar, correlations m0, mpar,
    and gradient correlations gtrace, gpar. Assembling a budget from these is
    cheap, so snapshot-refinement studies reuse one integrand computation.
    """

    times: np.ndarray
    s_nodes: np.ndarray
    s_weights: np.ndarray
    dim: int
    data: dict


def khm_integrands(ensembles: list, tensor: TestTensor, dirs: DirectionSet,
                   n_radial: int = 16, threads: int = 1) -> KHMIntegrands:
    times = np.array([e.time for e in ensembles])
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("ensembles must be strictly time-ordered")
    s_nodes, s_weights = gauss_legendre_nodes(tensor.support, n_radial)
    dim = ensembles[0].grid.dim
    names = ("b0", "b1", "q0", "qpar", "m0", "mpar", "gtrace", "gpar")
    data = {n: np.zeros((len(ensembles), s_nodes.size)) for n in names}

    def member_rows(m):
        mom = increment_moments(m, dirs.vectors, s_nodes, p_list=(3,))
        tps = TwoPointSpectrum(m)
        prof = tps.radial_profiles(
            dirs.vectors, s_nodes,
            quantities=("m0", "mpar", "gtrace", "gpar"))
        npn0 = tps.corr0_along(dirs.vectors)
        return {
            "b0": dirs.average(mom["s03"]),
            "b1": dirs.average(mom[("spar", 3)]),
            "m0": dirs.average(prof["m0"]),
            "mpar": dirs.average(prof["mpar"]),
            "gtrace": dirs.average(prof["gtrace"]),
            "gpar": dirs.average(prof["gpar"]),
            "q0": 2.0 * (tps.corr0 - dirs.average(prof["m0"])),
            "qpar": 2.0 * dirs.average(npn0[:, None] - prof["mpar"]),
        }

    for j, ens in enumerate(ensembles):
        for rows in parallel_map(member_rows, ens.members, threads):
            for n in names:
                data[n][j] += rows[n]
        for n in names:
            data[n][j] /= ens.size
    return KHMIntegrands(times, s_nodes, s_weights, dim, data)


def _profile_arrays(profile: RadialBump | None, s: np.ndarray):
    if profile is None:
        z = np.zeros_like(s)
        return z, z.copy(), z.copy()
    return profile.value(s), profile.d1(s), profile.d2(s)


def assemble_khm_budget(integr: KHMIntegrands, tensor: TestTensor, nu: float,
                        form: str = "full",
                        time_indices=None) -> KHMBudget:
    """Budget from precomputed integrands on a subset of snapshot times."""
    if form not in FORMS:
        raise ConfigurationError(f"form must be one of {FORMS}")
    if form == "trace" and tensor.omega2 is not None:
        raise ConfigurationError("trace form uses sigma = omega1 * I only")
    if form == "longitudinal" and tensor.omega1 is not None:
        raise ConfigurationError(
            "longitudinal form uses sigma = omega2 * hh only")
    idx = (np.arange(len(integr.times)) if time_indices is None
           else np.asarray(time_indices))
    times = integr.times[idx]
    s = integr.s_nodes
    d = integr.dim
    w_rad = SPHERE_MEASURE[d] * integr.s_weights * s ** (d - 1)
    w1, dw1, ddw1 = _profile_arrays(tensor.omega1, s)
    w2, dw2, ddw2 = _profile_arrays(tensor.omega2, s)
    c0 = dw1 + 2.0 * w2 / s                 # weight of <|d|^2 (d.n)>
    c1 = dw2 - 2.0 * w2 / s                 # weight of <(d.n)^3>
    lap1 = ddw1 + (d - 1) * dw1 / s + 2.0 * w2 / s ** 2
    lap2 = ddw2 + (d - 1) * dw2 / s - 2.0 * d * w2 / s ** 2

    def h_int(weights, arr):
        return arr[idx] @ (w_rad * weights)

    def t_int(series):
        return float(np.trapezoid(series, times))

    dat = integr.data
    corr = h_int(w1, dat["m0"]) + h_int(w2, dat["mpar"])
    corr_tau, corr_0 = float(corr[-1]), float(corr[0])
    cubic = 0.5 * t_int(h_int(c0, dat["b0"]) + h_int(c1, dat["b1"]))
    viscous = -nu * t_int(h_int(lap1, dat["q0"]) + h_int(lap2, dat["qpar"]))
    viscous_alt = -2.0 * nu * t_int(h_int(w1, dat["gtrace"])
                                    + h_int(w2, dat["gpar"]))
    terms = {
        "corr_tau": corr_tau,
        "corr_0": corr_0,
        "cubic": cubic,
        "viscous": viscous,
        "viscous_alt": viscous_alt,
    }
    residual = corr_tau - corr_0 + cubic - viscous
    scale = max(abs(corr_tau), abs(corr_0), abs(cubic), abs(viscous))
    return KHMBudget(form=form, nu=nu, tau=float(times[-1]), terms=terms,
                     residual=residual, scale=scale,
                     tensor=tensor.describe())


def khm_budget(ensembles: list, tensor: TestTensor, nu: float | None = None,
               form: str = "full", dirs: DirectionSet | None = None,
               n_radial: int = 16, threads: int = 1) -> KHMBudget:
    """Assemble the budget for time-ordered ensembles over [0, tau]."""
    if nu is None:
        nu = ensembles[0].nu
    if dirs is None:
        from .structure_stats import direction_set
        dirs = direction_set(ensembles[0].grid.dim,
                             32 if ensembles[0].grid.dim == 2 else 64)
    integr = khm_integrands(ensembles, tensor, dirs, n_radial, threads=threads)
    return assemble_khm_budget(integr, tensor, nu, form)


def write_khm_report(budget: KHMBudget, path, provenance: dict | None = None) -> None:
    doc = budget.to_json()
    if provenance:
        doc["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Cubic rearrangement identity
# ---------------------------------------------------------------------------

def cubic_identity_check(ens: Ensemble, tensor: TestTensor,
                         dirs: DirectionSet, n_radial: int = 16) -> float:
    """Relative defect of the cubic-term rearrangement at a fixed time:

        2 <int u(x).u(x+h) (d.n)-type terms : grad sigma>
            = - <int d d d : grad sigma>,

    which holds for periodic, incompressible members; it isolates
    incompressibility and periodicity errors from time-integration errors
    in the full budget. No divergence validation is performed so the check
    can serve as a detector on synthetic inputs.
    """
    s, s_weights = gauss_legendre_nodes(tensor.support, n_radial)
    d = ens.grid.dim
    w_rad = SPHERE_MEASURE[d] * s_weights * s ** (d - 1)
    w1, dw1, _ = _profile_arrays(tensor.omega1, s)
    w2, dw2, _ = _profile_arrays(tensor.omega2, s)
    c0 = dw1 + 2.0 * w2 / s
    c1 = dw2 - 2.0 * w2 / s
    lhs = rhs = 0.0
    for m in ens.members:
        mixed = cubic_mixed_profiles(m, dirs.vectors, s)
        c_a = dirs.average(mixed["c_a"])
        c_b = dirs.average(mixed["c_b"])
        c_c = dirs.average(mixed["c_c"])
        lhs += 2.0 * float((c_a * dw1 + c_b * (dw2 - 2.0 * w2 / s)
                            + c_c * (w2 / s)) @ w_rad)
        mom = increment_moments(m, dirs.vectors, s, p_list=(3,))
        b0 = dirs.average(mom["s03"])
        b1 = dirs.average(mom[("spar", 3)])
        rhs += -float((c0 * b0 + c1 * b1) @ w_rad)
    lhs /= ens.size
    rhs /= ens.size
    # both sides can vanish identically (e.g. unidirectional shear); floor
    # the normalization with a dimensional cubic-moment scale so that pure
    # roundoff reads as ~0 rather than 0/0
    e_mean = float(np.mean([TwoPointSpectrum(m).corr0 for m in ens.members]))
    char = ((2.0 * e_mean) ** 1.5 / np.sqrt(ens.grid.volume)
            * float((np.abs(dw1) + np.abs(c0) + np.abs(c1)
                     + np.abs(w2) / s) @ w_rad))
    denom = max(abs(lhs), abs(rhs), 1e-6 * char)
    if denom == 0.0:
        return 0.0
    return abs(lhs - rhs) / denom
