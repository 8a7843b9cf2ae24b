"""Structured run configuration: JSON schema validation with full violation
reporting, defaults, and builders for the pipeline objects."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import jsonschema

from .ensemble import MeasureSpec
from .nse_solver import SolverConfig
from .spectral_field import Grid

SCHEMA_VERSION = 1

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nse-stat run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "solver", "measure"],
    "properties": {
        "schema_version": {"type": "integer", "const": SCHEMA_VERSION},
        "threads": {"type": "integer", "minimum": 1},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "n"],
            "properties": {
                "dim": {"type": "integer", "enum": [2, 3]},
                "n": {"type": "integer", "minimum": 8},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nu", "t_end"],
            "properties": {
                "nu": {"type": "number", "minimum": 0},
                "t_end": {"type": "number", "minimum": 0},
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "cfl": {"type": "number", "exclusiveMinimum": 0,
                        "maximum": 1.0},
                "snapshot_interval": {"type": ["number", "null"],
                                      "exclusiveMinimum": 0},
                "dealias": {"type": "boolean"},
                "integrator": {"type": "string", "enum": ["if-rk4"]},
            },
        },
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"type": "string",
                         "enum": ["random_fourier", "perturbed_base"]},
                "spectrum_slope": {"type": "number"},
                "k_min": {"type": "integer", "minimum": 1},
                "k_max": {"type": "integer", "minimum": 1},
                "base": {"type": ["string", "null"],
                         "enum": ["taylor_green", "shear", None]},
                "perturbation_amp": {"type": "number"},
                "support_radius": {"type": "number", "exclusiveMinimum": 0},
                "amplitude": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "members": {"type": "integer", "minimum": 1},
                "sample_times": {
                    "type": ["array", "null"],
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 1,
                },
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r_min": {"type": "number", "exclusiveMinimum": 0},
                "r_max": {"type": "number", "exclusiveMinimum": 0},
                "r_count": {"type": "integer", "minimum": 2},
                "directions": {"type": "integer", "minimum": 8},
                "radial_nodes": {"type": "integer", "minimum": 2},
                "tensor_s0": {"type": "number", "exclusiveMinimum": 0},
                "window_power": {"type": "integer", "minimum": 1},
                "tau": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "p_list": {"type": "array",
                           "items": {"type": "integer", "minimum": 1}},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nus": {"type": ["array", "null"], "minItems": 1,
                        "items": {"type": "number", "exclusiveMinimum": 0}},
                "run_id": {"type": "string", "minLength": 1},
                "fk_modes": {"type": "array"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "threads": 1,
    "solver": {"dt": None, "cfl": 0.4, "snapshot_interval": None,
               "dealias": True, "integrator": "if-rk4"},
    "measure": {"kind": "random_fourier", "spectrum_slope": 5.0 / 3.0,
                "k_min": 1, "k_max": 8, "base": None,
                "perturbation_amp": 0.0, "support_radius": 10.0,
                "amplitude": 1.0, "seed": 0},
    "ensemble": {"members": 1, "sample_times": None},
    "analysis": {"r_min": 0.1, "r_max": 1.5, "r_count": 24,
                 "directions": 64, "radial_nodes": 16, "tensor_s0": 0.4,
                 "window_power": 2, "tau": None, "p_list": [2, 3]},
    "sweep": {"nus": None, "run_id": "sweep", "fk_modes": [[[0, 1], 0],
                                                           [[1, 2], 0]]},
    "output": {"dir": "."},
}


class ConfigError(ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, violations: list):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))

    def to_json(self) -> dict:
        return {"error": "config", "violations": self.violations}


def _fill_defaults(data: dict) -> dict:
    out = copy.deepcopy(data)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            section = out.setdefault(key, {})
            for k2, v2 in val.items():
                section.setdefault(k2, v2)
        else:
            out.setdefault(key, val)
    return out


def _cross_checks(data: dict) -> list:
    errs = []
    grid = data["grid"]
    n = grid["n"]
    if n & (n - 1) != 0:
        errs.append(f"grid.n must be a power of two, got {n}")
    solver = data["solver"]
    if solver["nu"] < 0:
        errs.append("solver.nu must be >= 0")
    meas = data["measure"]
    if meas["k_max"] < meas["k_min"]:
        errs.append("measure.k_max must be >= measure.k_min")
    if meas["k_max"] > n // 3:
        errs.append(
            f"measure.k_max={meas['k_max']} exceeds the dealias cut "
            f"n/3={n // 3}; the spectrum band must survive the 2/3 rule")
    if meas["kind"] == "perturbed_base" and meas["base"] is None:
        errs.append("measure.base is required for kind 'perturbed_base'")
    dt = solver["dt"]
    si = solver["snapshot_interval"]
    if dt is not None and si is not None and si < dt:
        errs.append("solver.snapshot_interval must be >= solver.dt")
    times = data["ensemble"]["sample_times"]
    if times is not None:
        if any(b <= a for a, b in zip(times, times[1:])):
            errs.append("ensemble.sample_times must be strictly increasing")
        if times and times[-1] > solver["t_end"] + 1e-12:
            errs.append("ensemble.sample_times must not exceed solver.t_end")
    ana = data["analysis"]
    if ana["r_max"] > np.pi:
        errs.append("analysis.r_max must not exceed the half-period pi")
    if ana["r_min"] >= ana["r_max"]:
        errs.append("analysis.r_min must be smaller than analysis.r_max")
    if ana["tensor_s0"] >= np.pi:
        errs.append("analysis.tensor_s0 must stay inside the half-period pi")
    if ana["directions"] % 2 != 0:
        errs.append("analysis.directions must be even")
    nus = data["sweep"]["nus"]
    if nus is not None and any(b >= a for a, b in zip(nus, nus[1:])):
        errs.append("sweep.nus must be strictly decreasing")
    return errs


@dataclass
class RunConfig:
    """Validated configuration with builders for the pipeline objects."""

    data: dict

    @property
    def sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.data).encode()).hexdigest()

    @property
    def threads(self) -> int:
        return self.data["threads"]

    def grid(self) -> Grid:
        return Grid(self.data["grid"]["dim"], self.data["grid"]["n"])

    def solver_config(self) -> SolverConfig:
        s = self.data["solver"]
        return SolverConfig(nu=s["nu"], t_end=s["t_end"], dt=s["dt"],
                            cfl=s["cfl"],
                            snapshot_interval=s["snapshot_interval"],
                            dealias=s["dealias"], integrator=s["integrator"])

    def measure_spec(self) -> MeasureSpec:
        return MeasureSpec(**self.data["measure"])

    def sample_times(self) -> list:
        times = self.data["ensemble"]["sample_times"]
        if times is not None:
            return [float(t) for t in times]
        s = self.data["solver"]
        interval = s["snapshot_interval"] or s["t_end"]
        m = int(round(s["t_end"] / interval))
        return [j * interval for j in range(m + 1)]

    def r_grid(self) -> np.ndarray:
        ana = self.data["analysis"]
        return np.geomspace(ana["r_min"], ana["r_max"], ana["r_count"])

    def provenance(self) -> dict:
        from . import __version__
        return {"config_sha256": self.sha256, "version": __version__}


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def validate_config(data: dict) -> RunConfig:
    """Validate and fill defaults; raises ConfigError listing every
    violation (schema and cross-field)."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    filled = _fill_defaults(data) if isinstance(data, dict) else data
    violations = []
    for err in sorted(validator.iter_errors(filled), key=str):
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        violations.append(f"{path}: {err.message}")
    try:
        violations.extend(_cross_checks(filled))
    except (KeyError, TypeError):
        # cross-field checks need structurally valid sections; the schema
        # violations above already explain what is missing
        pass
    if violations:
        raise ConfigError(violations)
    return RunConfig(filled)


def parse_config(path) -> RunConfig:
    """Load, validate and default-fill a JSON configuration file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a JSON object"])
    return validate_config(data)
