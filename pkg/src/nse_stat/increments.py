"""Shared machinery for two-point statistics of band-limited fields.

Quadratic two-point quantities (correlations, squared increments, gradient
correlations) are evaluated from the nonzero spectral band as

    C_ij(h) = int u_i(x) u_j(x+h) dx = (2*pi)^d sum_k conj(uhat_i) uhat_j e^{i k.h},

which is exact at arbitrary offsets h and cheap along radial rays h = s*n.
Cubic quantities need the shifted field itself and go through batched
spectral shifts. Lattice-offset averages of squared increments reduce to a
single FFT autocorrelation.
"""

from __future__ import annotations

import numpy as np

from .spectral_field import Grid, VelocityField, shifted_components

_CHUNK_DIRS = 8


class TwoPointSpectrum:
    """Band-restricted spectral products of one field, queryable at any h."""

    def __init__(self, fld: VelocityField):
        grid = fld.grid
        hat = fld.hat
        mag = np.sum(np.abs(hat) ** 2, axis=0)
        mask = mag > 0.0
        idx = np.nonzero(mask)
        k_mesh = grid.cached("k")
        self.grid = grid
        self.vol = grid.volume
        self.kvecs = np.stack([k_mesh[j][idx] for j in range(grid.dim)], axis=1)
        coeffs = np.stack([hat[c][idx] for c in range(grid.dim)])  # (d, K)
        self.pair = np.einsum("ik,jk->ijk", np.conj(coeffs), coeffs)
        self.trace = np.einsum("iik->k", self.pair)
        self.ksq = np.sum(self.kvecs ** 2, axis=1)
        self.trace_grad = self.ksq * self.trace
        # h = 0 values
        self.corr0 = self.vol * float(np.sum(self.trace).real)
        self.h1 = self.vol * float(np.sum(self.trace_grad).real)

    def corr0_along(self, dirs: np.ndarray) -> np.ndarray:
        """n . C(0) . n per direction."""
        npn = np.einsum("ni,ijk,nj->nk", dirs, self.pair, dirs)
        return self.vol * np.sum(npn, axis=1).real

    def trace_at(self, offsets: np.ndarray) -> np.ndarray:
        """sum_i C_ii(h) at arbitrary offsets (Q, d)."""
        offsets = np.atleast_2d(offsets)
        out = np.empty(offsets.shape[0])
        for lo in range(0, offsets.shape[0], 256):
            sl = slice(lo, lo + 256)
            phases = np.exp(1j * (self.kvecs @ offsets[sl].T))  # (K, q)
            out[sl] = self.vol * (self.trace @ phases).real
        return out

    def radial_profiles(self, dirs: np.ndarray, s_values: np.ndarray,
                        quantities=("m0", "mpar")) -> dict:
        """Evaluate two-point quantities along rays h = s*n.

        Returns arrays of shape (n_dirs, n_s) for each requested key:
          m0     trace correlation sum_i C_ii(s n)
          mpar   longitudinal correlation n.C(s n).n
          gtrace gradient correlation int grad u(x) : grad u(x+sn) dx
          gpar   longitudinal gradient correlation
                 int grad(u.n)(x) . grad(u.n)(x+sn) dx
        """
        dirs = np.atleast_2d(dirs)
        s_values = np.atleast_1d(s_values).astype(np.float64)
        need_npn = ("mpar" in quantities) or ("gpar" in quantities)
        nd = dirs.shape[0]
        out = {q: np.empty((nd, s_values.size)) for q in quantities}
        npn_all = (np.einsum("ni,ijk,nj->nk", dirs, self.pair, dirs)
                   if need_npn else None)
        for lo in range(0, nd, _CHUNK_DIRS):
            sl = slice(lo, min(lo + _CHUNK_DIRS, nd))
            kn = self.kvecs @ dirs[sl].T                        # (K, c)
            phases = np.exp(1j * kn[:, :, None] * s_values)     # (K, c, S)
            if "m0" in out:
                out["m0"][sl] = self.vol * np.einsum(
                    "k,kns->ns", self.trace, phases).real
            if "mpar" in out:
                out["mpar"][sl] = self.vol * np.einsum(
                    "nk,kns->ns", npn_all[sl], phases).real
            if "gtrace" in out:
                out["gtrace"][sl] = self.vol * np.einsum(
                    "k,kns->ns", self.trace_grad, phases).real
            if "gpar" in out:
                out["gpar"][sl] = self.vol * np.einsum(
                    "nk,kns->ns", npn_all[sl] * self.ksq, phases).real
        return out


def squared_increment_profiles(tps: TwoPointSpectrum, dirs, s_values) -> dict:
    """int |du|^2 dx and int (du.n)^2 dx along rays, from the spectrum.

    Uses int |u(x+sn)-u(x)|^2 dx = 2 (C_tr(0) - C_tr(sn)) and the analogous
    longitudinal identity (the quadratic form symmetrizes C automatically).
    """
    prof = tps.radial_profiles(dirs, s_values, quantities=("m0", "mpar"))
    q0 = 2.0 * (tps.corr0 - prof["m0"])
    qpar = 2.0 * (tps.corr0_along(np.atleast_2d(dirs))[:, None] - prof["mpar"])
    return {"q0": q0, "qpar": qpar, "m0": prof["m0"], "mpar": prof["mpar"]}


def _ray_offsets(dirs: np.ndarray, s_values: np.ndarray) -> np.ndarray:
    """Flattened offsets s*n, ordered direction-major: (n_dirs * n_s, d)."""
    return (dirs[:, None, :] * s_values[None, :, None]).reshape(
        -1, dirs.shape[1])


def increment_moments(fld: VelocityField, dirs, s_values, p_list=(2, 3),
                      want_cubed_trace: bool = True,
                      batch: int = 96) -> dict:
    """Real-space directional increment moments along rays h = s*n.

    For each direction n and separation s, with du = u(.+sn) - u(.):
      spar[p]  int (du . n)^p dx          (longitudinal moments)
      s03      int |du|^2 (du . n) dx     (mixed cubic moment)

    Increments use exact spectral shifts; the grid sum is exact for the
    cubic integrand because retained modes satisfy 3|k_max| < n. All
    (direction, separation) pairs are processed in flat batches.
    """
    dirs = np.atleast_2d(dirs)
    s_values = np.atleast_1d(s_values).astype(np.float64)
    nd, ns = dirs.shape[0], s_values.size
    offsets = _ray_offsets(dirs, s_values)
    dir_of = np.repeat(dirs, ns, axis=0)                    # (Q, d)
    cv = fld.grid.cell_volume
    flat = fld.grid.n ** fld.grid.dim
    u = fld.components.reshape(fld.grid.dim, flat)
    out = {("spar", p): np.empty(nd * ns) for p in p_list}
    if want_cubed_trace:
        out["s03"] = np.empty(nd * ns)
    for lo in range(0, offsets.shape[0], batch):
        sl = slice(lo, min(lo + batch, offsets.shape[0]))
        shifted = shifted_components(fld, offsets[sl]).reshape(
            sl.stop - sl.start, fld.grid.dim, flat)
        inc = shifted - u[None]
        long = np.einsum("qdx,qd->qx", inc, dir_of[sl])
        if 2 in p_list:
            out[("spar", 2)][sl] = cv * np.einsum("qx,qx->q", long, long)
        if 3 in p_list:
            out[("spar", 3)][sl] = cv * np.einsum("qx,qx,qx->q",
                                                  long, long, long)
        for p in p_list:
            if p not in (2, 3):
                out[("spar", p)][sl] = cv * np.sum(long ** p, axis=1)
        if want_cubed_trace:
            tr = np.einsum("qdx,qdx->qx", inc, inc)
            out["s03"][sl] = cv * np.einsum("qx,qx->q", tr, long)
    return {key: val.reshape(nd, ns) for key, val in out.items()}


def cubic_mixed_profiles(fld: VelocityField, dirs, s_values) -> dict:
    """Mixed cubic moments at separations h = s*n, with v = u(.), w = u(.+sn)
    and du = w - v:

      c_a  int (v . w)(du . n) dx
      c_b  int (v . n)(w . n)(du . n) dx
      c_c  int [(du . v)(w . n) + (v . n)(du . w)] dx

    These are the pieces of the cubic-term rearrangement identity that pair
    one-point values with increments.
    """
    dirs = np.atleast_2d(dirs)
    s_values = np.atleast_1d(s_values).astype(np.float64)
    nd, ns = dirs.shape[0], s_values.size
    offsets = _ray_offsets(dirs, s_values)
    dir_of = np.repeat(dirs, ns, axis=0)
    cv = fld.grid.cell_volume
    flat = fld.grid.n ** fld.grid.dim
    v = fld.components.reshape(fld.grid.dim, flat)
    out = {"c_a": np.empty(nd * ns), "c_b": np.empty(nd * ns),
           "c_c": np.empty(nd * ns)}
    batch = 96
    for lo in range(0, offsets.shape[0], batch):
        sl = slice(lo, min(lo + batch, offsets.shape[0]))
        w = shifted_components(fld, offsets[sl]).reshape(
            sl.stop - sl.start, fld.grid.dim, flat)
        inc = w - v[None]
        v_dot_w = np.einsum("dx,qdx->qx", v, w)
        v_n = np.einsum("dx,qd->qx", v, dir_of[sl])
        w_n = np.einsum("qdx,qd->qx", w, dir_of[sl])
        inc_n = w_n - v_n
        out["c_a"][sl] = cv * np.einsum("qx,qx->q", v_dot_w, inc_n)
        out["c_b"][sl] = cv * np.einsum("qx,qx,qx->q", v_n, w_n, inc_n)
        inc_v = np.einsum("qdx,dx->qx", inc, v)
        inc_w = np.einsum("qdx,qdx->qx", inc, w)
        out["c_c"][sl] = cv * (np.einsum("qx,qx->q", inc_v, w_n)
                               + np.einsum("qx,qx->q", v_n, inc_w))
    return {key: val.reshape(nd, ns) for key, val in out.items()}


# ---------------------------------------------------------------------------
# Lattice-offset averages
# ---------------------------------------------------------------------------

_LATTICE_ORDER_CACHE: dict = {}


def lattice_distance_order(grid: Grid):
    """Minimum-image distances of all lattice offsets, ascending.

    Returns (sorted distances, flat argsort indices); cached per grid shape.
    """
    key = (grid.dim, grid.n)
    if key not in _LATTICE_ORDER_CACHE:
        m1d = np.fft.fftfreq(grid.n, d=1.0 / grid.n)       # 0..n/2-1, -n/2..-1
        axes = np.meshgrid(*([m1d] * grid.dim), indexing="ij")
        dist = np.sqrt(sum(a * a for a in axes)).ravel() * grid.dx
        order = np.argsort(dist, kind="stable")
        _LATTICE_ORDER_CACHE[key] = (dist[order], order)
    return _LATTICE_ORDER_CACHE[key]


def trace_autocorrelation(fld: VelocityField) -> np.ndarray:
    """A[m] = int u(x) . u(x + m*dx) dx on the whole offset lattice (one FFT)."""
    grid = fld.grid
    power = np.sum(np.abs(fld.hat) ** 2, axis=0)
    return grid.volume * grid.n ** grid.dim * np.fft.ifftn(power).real


def vogel_ball_offsets(grid: Grid, r: float, count: int = 32) -> np.ndarray:
    """Low-discrepancy deterministic offsets filling the ball of radius r.

    A Vogel/Fibonacci spiral: golden-angle directions with radii spaced so
    each point represents equal volume.
    """
    j = np.arange(count)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    if grid.dim == 2:
        s = r * np.sqrt((j + 0.5) / count)
        theta = golden * j
        return np.stack([s * np.cos(theta), s * np.sin(theta)], axis=1)
    s = r * ((j + 0.5) / count) ** (1.0 / 3.0)
    z = 1.0 - 2.0 * (j + 0.5) / count
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = golden * j
    return np.stack([s * rho * np.cos(theta), s * rho * np.sin(theta), s * z],
                    axis=1)
