"""Run configuration: YAML schema, defaults and validation."""
from __future__ import annotations

import difflib
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1

EXPERIMENTS = ("evolve-1d", "evolve-radial", "kinetic-converge", "steady-shoot",
               "critical-mass", "entropy-track", "decay-fit")


@dataclass
class RunConfig:
    """Every key a config file may set.  Unused keys for an experiment are ignored."""

    experiment: str = "evolve-1d"
    schema_version: int = SCHEMA_VERSION
    # model
    lambda0: float = 1.0
    chi: float = 1.0
    alpha: float = 0.0
    tau: int = 0
    D: float = 1.0
    M: float = 2.0
    limiter: str = "kinetic"          # kinetic | constant
    phi_value: float = 1.0            # value of the constant limiter
    response: str = "algebraic"       # tanh | algebraic | zero
    velocity: str | None = None       # interval | disk; None picks the experiment default
    epsilon: list[float] = field(default_factory=lambda: [0.4, 0.2, 0.1])
    # grids and time stepping
    L: float = 20.0
    R: float = 60.0
    cells: int = 512
    d: int = 2
    dt: float | None = None
    cfl: float = 0.9
    T_end: float = 1.0
    output_every: int = 10
    snapshot_every: int = 0           # steps between profile snapshots; 0 keeps first and last
    tol: float = 1e-10
    # initial data
    ic: str = "gaussian"              # gaussian | tanh | bumps
    ic_width: float = 1.0
    seed: int = 0
    # kinetic
    kinetic_cells: int = 256
    kinetic_T: float = 1.0
    control_T: float = 0.5
    control_epsilon: float = 0.1
    # steady
    a_values: list[float] | None = None
    a_min: float = 1e-3
    a_max: float = 1e5
    n_a: int = 40
    masses: list[float] = field(default_factory=list)
    probe_a: float = 1.0
    probe_r_max: float = 50.0
    # entropy / decay
    steady_ends: bool = True
    cross_check: bool = False
    series: str | None = None
    column: str = "linf"
    window: list[float] | None = None
    out: str | None = None

    def echo(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """sha256 of the canonical JSON form."""
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


_KEYS = {f.name: f for f in fields(RunConfig)}
_FLOATS = {"lambda0", "chi", "alpha", "D", "M", "phi_value", "L", "R", "dt", "cfl", "T_end", "tol",
           "ic_width", "kinetic_T", "control_T", "control_epsilon", "a_min", "a_max", "probe_a",
           "probe_r_max"}
_INTS = {"schema_version", "tau", "cells", "d", "output_every", "snapshot_every", "seed", "kinetic_cells",
         "n_a"}
_BOOLS = {"steady_ends", "cross_check"}
_FLOAT_LISTS = {"epsilon", "a_values", "masses", "window"}
_CHOICES = {"experiment": EXPERIMENTS, "limiter": ("kinetic", "constant"),
            "response": ("tanh", "algebraic", "zero"), "velocity": ("interval", "disk"),
            "ic": ("gaussian", "tanh", "bumps")}


def _coerce(key: str, value):
    if value is None:
        if key in ("dt", "a_values", "series", "window", "out", "velocity"):
            return None
        raise ConfigError(f"{key} must not be null")
    try:
        if key in _BOOLS:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key in _INTS:
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if key in _FLOATS:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if key in _FLOAT_LISTS:
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {_kind(key)}") from None
    return str(value)


def _kind(key: str) -> str:
    if key in _BOOLS:
        return "a boolean"
    if key in _INTS:
        return "an integer"
    if key in _FLOATS:
        return "a number"
    if key in _FLOAT_LISTS:
        return "a list of numbers"
    return "a string"


def validate(cfg: RunConfig) -> RunConfig:
    """Check every precondition; the message names the offending key."""
    def need(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    need(cfg.schema_version == SCHEMA_VERSION, f"schema_version must be {SCHEMA_VERSION}")
    for key, choices in _CHOICES.items():
        value = getattr(cfg, key)
        need(value in choices or (key == "velocity" and value is None),
             f"{key} must be one of {', '.join(choices)}")
    need(cfg.lambda0 > 0, "lambda0 must be > 0")
    need(cfg.chi > 0, "chi must be > 0")
    need(cfg.alpha >= 0, "alpha must be ≥ 0")
    need(cfg.tau in (0, 1), "tau must be 0 or 1")
    need(cfg.D > 0, "D must be > 0")
    need(cfg.M > 0, "M must be > 0")
    need(cfg.phi_value > 0, "phi_value must be > 0")
    need(cfg.L > 0, "L must be > 0")
    need(cfg.R > 0, "R must be > 0")
    need(cfg.cells >= 3, "cells must be ≥ 3")
    need(cfg.kinetic_cells >= 3, "kinetic_cells must be ≥ 3")
    need(cfg.d >= 2, "d must be ≥ 2")
    need(cfg.dt is None or cfg.dt > 0, "dt must be > 0")
    need(0 < cfg.cfl <= 1, "cfl must lie in (0, 1]")
    need(cfg.T_end > 0, "T_end must be > 0")
    need(cfg.output_every >= 1, "output_every must be ≥ 1")
    need(cfg.snapshot_every >= 0, "snapshot_every must be ≥ 0")
    need(cfg.tol > 0, "tol must be > 0")
    need(cfg.ic_width > 0, "ic_width must be > 0")
    need(cfg.kinetic_T > 0 and cfg.control_T > 0, "kinetic_T and control_T must be > 0")
    need(cfg.control_epsilon > 0, "control_epsilon must be > 0")
    need(all(e > 0 for e in cfg.epsilon), "epsilon values must be > 0")
    need(all(b < a for a, b in zip(cfg.epsilon, cfg.epsilon[1:])), "epsilon list must be strictly decreasing")
    need(0 < cfg.a_min < cfg.a_max, "a_min and a_max must satisfy 0 < a_min < a_max")
    need(cfg.n_a >= 2, "n_a must be ≥ 2")
    need(cfg.a_values is None or all(a > 0 for a in cfg.a_values), "a_values must be > 0")
    need(all(m > 0 for m in cfg.masses), "masses must be > 0")
    need(cfg.probe_a >= 0, "probe_a must be ≥ 0")
    need(cfg.probe_r_max > 0, "probe_r_max must be > 0")
    need(cfg.window is None or (len(cfg.window) == 2 and 0 < cfg.window[0] < cfg.window[1]),
         "window must be [t_start, t_end] with 0 < t_start < t_end")
    if cfg.experiment == "decay-fit":
        need(cfg.series is not None, "series is required for decay-fit")
    if cfg.experiment == "kinetic-converge":
        need(cfg.tau == 0, "tau must be 0 for kinetic-converge")
        need(cfg.alpha > 0, "alpha must be > 0 for kinetic-converge (periodic chemical solve)")
        need(cfg.velocity in (None, "interval"), "velocity must be interval for kinetic-converge")
    if cfg.experiment == "entropy-track":
        need(cfg.tau == 0 and cfg.alpha == 0, "entropy-track needs tau = 0 and alpha = 0")
    return cfg


def velocity_kind(cfg: RunConfig) -> str:
    """Velocity geometry, defaulting to the disk for radial and steady runs."""
    if cfg.velocity is not None:
        return cfg.velocity
    return "disk" if cfg.experiment in ("evolve-radial", "steady-shoot", "critical-mass") else "interval"


def from_mapping(data: dict, experiment: str | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    unknown = [k for k in data if k not in _KEYS]
    if unknown:
        k = unknown[0]
        hint = difflib.get_close_matches(k, list(_KEYS), n=1)
        raise ConfigError(f"unknown key {k!r}" + (f"; did you mean {hint[0]!r}?" if hint else ""))
    values = {k: _coerce(k, v) for k, v in data.items()}
    if experiment is not None:
        if "experiment" in values and values["experiment"] != experiment:
            raise ConfigError(f"experiment: config says {values['experiment']!r} but {experiment!r} was requested")
        values["experiment"] = experiment
    return validate(RunConfig(**values))


def parse_config(path: str | Path | None, experiment: str | None = None) -> RunConfig:
    """Read a YAML config (``None`` gives the defaults)."""
    if path is None:
        return from_mapping({}, experiment)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML ({exc})") from None
    return from_mapping(data, experiment)
