"""Run configuration: nested dataclasses, YAML loading and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .bvp_control import ControlParams
from .grid_map import SensorConfig


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    method: str = "auto"        # auto | dense | fmm
    dense_max: int = 4000       # auto switches to the FMM above this many elements
    fmm_order: int = 8
    fmm_theta: float = 0.6
    fmm_leaf: int = 50
    gmres_rtol: float = 1e-6
    gmres_maxiter: int = 400

    def __post_init__(self):
        if self.method not in ("auto", "dense", "fmm"):
            raise ConfigError(f"solver.method must be auto, dense or fmm, got {self.method!r}")


@dataclass
class MazeConfig:
    rows: int = 3
    cols: int = 3
    corridor: int = 3
    wall: int = 1
    height: int = 3
    min_dead_ends: int = 1
    max_dead_ends: int = 3


@dataclass
class EnvironmentConfig:
    path: str | None = None     # STL/OBJ mesh; a maze is generated when absent
    start: list | None = None   # required with ``path``
    maze: MazeConfig = field(default_factory=MazeConfig)


@dataclass
class SimConfig:
    seed: int = 0
    cell_size: float = 0.25
    threshold: float = 0.5
    dt: float = 0.05
    u_max: float = 1.0
    resolve_every: int = 10
    resolve_distance_factor: float = 2.0    # re-solve when closer than this times R_1
    dead_end_closing: bool = True
    max_steps: int = 20000
    max_time: float = 1e9                   # simulated seconds
    stuck_steps: int = 50
    stuck_speed: float = 1e-6
    saddle_steps: int = 10
    grid_margin: int = 2
    control: ControlParams = field(default_factory=ControlParams)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)


def _build(cls, data, where="config"):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if is_dataclass(default):
            kw[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def from_dict(data) -> SimConfig:
    return _build(SimConfig, data)


def load_config(path=None, overrides=()) -> SimConfig:
    """Read YAML (optional), apply ``a.b=value`` overrides, validate."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = yaml.safe_load(raw)
    return from_dict(data)


def dump_config(cfg, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
