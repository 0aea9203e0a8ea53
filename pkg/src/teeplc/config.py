"""YAML run configuration with flag overrides.

Schema (all keys optional)::

    mode: enhanced            # baseline | minimal | enhanced
    scenario: tank            # tank | generator | pairs
    pairs: 1                  # pairs scenario only
    cycles: 100
    seed: 0
    clock: virtual            # virtual | wall
    interval_ms: 20
    timeout_s: 0.5
    world:
      round_trip_us: 280
    costs:                    # virtual clock, microseconds
      rtt_us: 1200
      jitter_us: 50
      slave_processing_us: 100
      logic_exec_us: 5
      snapshot_publish_us: 10
      seal_us: 60
      open_us: 50
      secure_socket_us: 2450
    plant:
      host: 127.0.0.1
      base_port: 1502         # endpoint i listens on base_port + i
      one_way_delay_ms: 0
    scada_port: null          # serve snapshots read-only on this port
    keys:                     # hex files written by `teeplc keygen`
      authority: keys/authority.key
      ta: keys/ta.key
      plc: keys/plc.key
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .clock import MS, US, CostModel
from .runtime import MODES, ConfigError
from .worldsim import WorldSwitchConfig

SCENARIO_NAMES = ("tank", "generator", "pairs")
COST_KEYS = {f"{f.name}_us": f.name for f in fields(CostModel)}


@dataclass
class RunConfig:
    mode: str = "enhanced"
    scenario: str = "tank"
    pairs: int = 1
    cycles: int = 100
    seed: int = 0
    clock: str = "virtual"
    interval_ms: float = 20.0
    timeout_s: float = 0.5
    round_trip_us: float = 280.0
    costs: CostModel = field(default_factory=CostModel)
    host: str = "127.0.0.1"
    base_port: int = 1502
    one_way_delay_ms: float = 0.0
    scada_port: int | None = None
    keys: dict = field(default_factory=dict)
    base_dir: str = "."

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.scenario not in SCENARIO_NAMES:
            raise ConfigError(f"scenario must be one of {', '.join(SCENARIO_NAMES)}")
        if self.clock not in ("virtual", "wall"):
            raise ConfigError("clock must be virtual or wall")
        if not isinstance(self.pairs, int) or self.pairs < 1:
            raise ConfigError("pairs must be a positive integer")
        if not isinstance(self.cycles, int) or self.cycles < 0:
            raise ConfigError("cycles must be a non-negative integer")
        if self.interval_ms <= 0:
            raise ConfigError("interval must be positive")
        if self.timeout_s <= 0:
            raise ConfigError("timeout must be positive")
        if self.round_trip_us < 0 or self.one_way_delay_ms < 0:
            raise ConfigError("latencies must be non-negative")
        for name in fields(CostModel):
            if getattr(self.costs, name.name) < 0:
                raise ConfigError(f"cost {name.name} must be non-negative")
        return self

    @property
    def interval_ns(self) -> int:
        return int(round(self.interval_ms * MS))

    def world_config(self) -> WorldSwitchConfig:
        return WorldSwitchConfig(round_trip_latency=int(round(self.round_trip_us * US)))

    def key_path(self, name: str) -> str:
        try:
            path = self.keys[name]
        except KeyError:
            raise ConfigError(f"config has no keys.{name} path") from None
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return value


def from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = {"mode", "scenario", "pairs", "cycles", "seed", "clock", "interval_ms", "timeout_s",
             "world", "costs", "plant", "scada_port", "keys"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = RunConfig(base_dir=base_dir)
    for key in ("mode", "scenario", "clock"):
        if key in data:
            setattr(cfg, key, str(data[key]))
    for key in ("pairs", "cycles", "seed"):
        if key in data:
            if not isinstance(data[key], int) or isinstance(data[key], bool):
                raise ConfigError(f"{key} must be an integer")
            setattr(cfg, key, data[key])
    for key in ("interval_ms", "timeout_s"):
        if key in data:
            setattr(cfg, key, float(_number(data[key], key)))
    world = data.get("world") or {}
    if "round_trip_us" in world:
        cfg.round_trip_us = float(_number(world["round_trip_us"], "world.round_trip_us"))
    costs = data.get("costs") or {}
    for key, value in costs.items():
        if key not in COST_KEYS:
            raise ConfigError(f"unknown cost {key!r}")
        setattr(cfg.costs, COST_KEYS[key], int(round(_number(value, key) * US)))
    plant = data.get("plant") or {}
    cfg.host = str(plant.get("host", cfg.host))
    cfg.base_port = int(plant.get("base_port", cfg.base_port))
    if "one_way_delay_ms" in plant:
        cfg.one_way_delay_ms = float(_number(plant["one_way_delay_ms"], "plant.one_way_delay_ms"))
    if data.get("scada_port") is not None:
        cfg.scada_port = int(data["scada_port"])
    cfg.keys = dict(data.get("keys") or {})
    return cfg


def load(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(data, os.path.dirname(os.path.abspath(path))).validate()


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Flags win over file values; ``None`` means not given."""
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()
