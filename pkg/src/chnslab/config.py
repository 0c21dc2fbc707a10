"""Run configuration: JSON schema, defaults, loading, initial conditions.

A run config is one JSON object with optional sections; unknown keys are
rejected so typos fail loudly instead of silently falling back to defaults.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import jsonschema

from .control import ControlSignal, OptimizerConfig, control_from_dict
from .grid import GridSpec
from .integrator import SchemeConfig, State, read_snapshot, rest_state, spinodal_state
from .operators import Params


class ConfigError(ValueError):
    """The run configuration is invalid."""


RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 8},
                "ny": {"type": "integer", "minimum": 8},
                "L": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nu": {"type": "number", "exclusiveMinimum": 0},
                "mobility": {"type": "number", "exclusiveMinimum": 0},
                "capillary": {"type": "number", "exclusiveMinimum": 0},
                "R": {"type": "number", "minimum": 0},
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_start": {"type": "number"},
                "t_end": {"type": "number"},
                "snapshot_every": {"type": "integer", "minimum": 0},
            },
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["rest", "spinodal", "file"]},
                "amplitude": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "path": {"type": "string"},
            },
        },
        "control": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "file"]},
                "path": {"type": "string"},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "population": {"type": "integer", "minimum": 2},
                "elites": {"type": "integer", "minimum": 1},
                "iterations": {"type": "integer", "minimum": 0},
                "fd_passes": {"type": "integer", "minimum": 0},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "intervals": {"type": "integer", "minimum": 1},
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
    "grid": {"nx": 64, "ny": 64, "L": 6.283185307179586},
    "params": {"nu": 1.0, "mobility": 1.0, "capillary": 1.0, "R": 0.0},
    "time": {"dt": 1e-3, "t_start": 0.0, "t_end": 1.0, "snapshot_every": 0},
    "init": {"kind": "spinodal", "amplitude": 0.01, "seed": 0, "path": ""},
    "control": {"kind": "zero", "path": ""},
    "optimizer": {"population": 64, "elites": 8, "iterations": 30,
                  "fd_passes": 2, "fd_step": 1e-3, "seed": 0, "intervals": 4},
    "output": {"dir": "out"},
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with all defaults resolved."""

    grid: GridSpec
    params: Params
    scheme: SchemeConfig
    t_start: float
    t_end: float
    snapshot_every: int
    init_kind: str
    init_amplitude: float
    init_seed: int
    init_path: str
    control_kind: str
    control_path: str
    optimizer: OptimizerConfig
    out_dir: str
    resolved: dict
    sha256: str

    @property
    def window(self) -> tuple[float, float]:
        return (self.t_start, self.t_end)


def _merged(raw: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for section, values in raw.items():
        out[section].update(values)
    return out


def parse_config(raw: dict, sha256: str = "") -> RunConfig:
    """Validate a raw config dict and resolve defaults."""
    try:
        jsonschema.validate(raw, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "(top level)"
        raise ConfigError(f"config invalid at {where}: {e.message}") from e
    d = _merged(raw)
    if d["time"]["t_end"] <= d["time"]["t_start"]:
        raise ConfigError("time.t_end must exceed time.t_start")
    if d["init"]["kind"] == "file" and not d["init"]["path"]:
        raise ConfigError("init.kind = file requires init.path")
    if d["control"]["kind"] == "file" and not d["control"]["path"]:
        raise ConfigError("control.kind = file requires control.path")
    if d["optimizer"]["elites"] > d["optimizer"]["population"]:
        raise ConfigError("optimizer.elites cannot exceed optimizer.population")
    try:
        grid = GridSpec(d["grid"]["nx"], d["grid"]["ny"], d["grid"]["L"])
        params = Params(nu=d["params"]["nu"], mobility=d["params"]["mobility"],
                        capillary=d["params"]["capillary"], R=d["params"]["R"])
        scheme = SchemeConfig(dt=d["time"]["dt"])
        opt = OptimizerConfig(population=d["optimizer"]["population"],
                              elites=d["optimizer"]["elites"],
                              iterations=d["optimizer"]["iterations"],
                              fd_passes=d["optimizer"]["fd_passes"],
                              fd_step=d["optimizer"]["fd_step"],
                              seed=d["optimizer"]["seed"],
                              intervals=d["optimizer"]["intervals"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return RunConfig(grid=grid, params=params, scheme=scheme,
                     t_start=float(d["time"]["t_start"]),
                     t_end=float(d["time"]["t_end"]),
                     snapshot_every=int(d["time"]["snapshot_every"]),
                     init_kind=d["init"]["kind"],
                     init_amplitude=float(d["init"]["amplitude"]),
                     init_seed=int(d["init"]["seed"]),
                     init_path=d["init"]["path"],
                     control_kind=d["control"]["kind"],
                     control_path=d["control"]["path"],
                     optimizer=opt, out_dir=d["output"]["dir"],
                     resolved=d, sha256=sha256)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(blob)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return parse_config(raw, sha256=hashlib.sha256(blob).hexdigest())


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """The same config with both RNG seeds replaced (CLI --seed override)."""
    raw = copy.deepcopy(cfg.resolved)
    raw["init"]["seed"] = seed
    raw["optimizer"]["seed"] = seed
    return parse_config(raw, sha256=cfg.sha256)


def initial_state(cfg: RunConfig) -> State:
    if cfg.init_kind == "rest":
        return rest_state(cfg.grid, t=cfg.t_start)
    if cfg.init_kind == "spinodal":
        return spinodal_state(cfg.grid, amplitude=cfg.init_amplitude,
                              seed=cfg.init_seed, t=cfg.t_start)
    try:
        s = read_snapshot(cfg.init_path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot load initial state {cfg.init_path}: {e}") from e
    if s.grid != cfg.grid:
        raise ConfigError(f"snapshot grid {s.grid.shape} does not match config "
                          f"grid {cfg.grid.shape}")
    return State(cfg.t_start, s.phi, s.u)


def control_signal(cfg: RunConfig) -> Optional[ControlSignal]:
    """The forcing schedule for simulate: None for the zero control."""
    if cfg.control_kind == "zero":
        return None
    try:
        with open(cfg.control_path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot load control {cfg.control_path}: {e}") from e
    try:
        u = control_from_dict(doc, cfg.grid, cfg.params.R)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"control file {cfg.control_path}: {e}") from e
    if abs(u.tau - cfg.t_start) > 1e-12 or abs(u.horizon - cfg.t_end) > 1e-12:
        raise ConfigError(f"control window [{u.tau}, {u.horizon}] does not match "
                          f"the configured time window {cfg.window}")
    return u
