"""Brute-force oracles, deliberately independent of the fast analysis paths.

These evaluate reference statistics by direct dense quadrature of analytic
fields (no FFTs, no spectral shifts, no shared direction sets) and exist to
generate golden files and to back verification suites. Slow by design.
"""

from __future__ import annotations

import numpy as np

GOLDEN_TG = {
    "grid_n": 64,
    "nu": 0.01,
    "t_end": 0.2,
    "times": [0.0, 0.05, 0.1, 0.15, 0.2],
    "r_values": [0.2, 0.3263, 0.5324, 0.8686, 1.4172],
}


def taylor_green_velocity(t: float, x: np.ndarray, y: np.ndarray,
                          nu: float) -> tuple:
    decay = np.exp(-2.0 * nu * t)
    return decay * np.cos(x) * np.sin(y), -decay * np.sin(x) * np.cos(y)


def brute_force_tg_structure(nu: float, times, r_values, n_grid: int = 96,
                             n_angles: int = 360) -> dict:
    """Time-integrated longitudinal and mixed cubic structure functions of
    the decaying Taylor-Green vortex by direct quadrature.

    Uses the closed-form solution, a dense midpoint grid in x and a dense
    angle grid, so it shares no code with the spectral pipeline.
    """
    times = np.asarray(times, dtype=np.float64)
    r_values = np.asarray(r_values, dtype=np.float64)
    h = 2.0 * np.pi / n_grid
    ax = (np.arange(n_grid) + 0.5) * h
    x, y = np.meshgrid(ax, ax, indexing="ij")
    angles = 2.0 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    s2_t = np.zeros((times.size, r_values.size))
    s03_t = np.zeros((times.size, r_values.size))
    for it, t in enumerate(times):
        u1, u2 = taylor_green_velocity(t, x, y, nu)
        for ir, r in enumerate(r_values):
            acc2 = acc3 = 0.0
            for th in angles:
                n1, n2 = np.cos(th), np.sin(th)
                v1, v2 = taylor_green_velocity(t, x + r * n1, y + r * n2, nu)
                d1, d2 = v1 - u1, v2 - u2
                dlong = d1 * n1 + d2 * n2
                acc2 += float(np.sum(dlong * dlong))
                acc3 += float(np.sum((d1 * d1 + d2 * d2) * dlong))
            s2_t[it, ir] = acc2 / n_angles * h * h
            s03_t[it, ir] = acc3 / n_angles * h * h
    return {
        "r_values": r_values.tolist(),
        "times": times.tolist(),
        "s2_par": np.trapezoid(s2_t, times, axis=0).tolist(),
        "s0_3": np.trapezoid(s03_t, times, axis=0).tolist(),
    }


def generate_golden_taylor_green() -> dict:
    doc = dict(GOLDEN_TG)
    doc.update(brute_force_tg_structure(GOLDEN_TG["nu"], GOLDEN_TG["times"],
                                        GOLDEN_TG["r_values"]))
    return doc
