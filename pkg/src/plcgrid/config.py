"""Run configuration: one YAML file with a section per stage.

Every randomised component draws from the single top-level seed. The
simulator uses it directly (it already derives per-link streams); each
pipeline stage uses ``stage_seed(seed, name)``.
"""
from __future__ import annotations

import dataclasses
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Tuple, Union

import numpy as np
import yaml

from .core import PROFILES, PLCError, parse_timestamp
from .embed import StateParams
from .joints import JointParams
from .sim import EventSpec, Interferer, NoiseModel, SimConfig, TopologyConfig, epoch
from .topo import TopoParams


class ConfigError(PLCError, ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def stage_seed(seed: int, stage: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode())]).generate_state(1)[0])


@dataclass(frozen=True)
class StatesStage:
    sample_size: int = 1000
    params: StateParams = field(default_factory=StateParams)


@dataclass(frozen=True)
class AnomalyStage:
    window_length: int = 96
    radius: Optional[float] = None
    min_support: int = 2
    metric: str = "mismatch01"
    threshold: Optional[float] = None
    stride: Optional[int] = None
    split: float = 0.75


@dataclass(frozen=True)
class TopoStage:
    radius: int = 2
    max_size: int = 8
    min_size: int = 4
    timesteps_per_day: int = 8
    train_fraction: float = 0.75
    threshold: float = 0.5
    symmetrize_rule: str = "mean"
    params: TopoParams = field(default_factory=TopoParams)


@dataclass(frozen=True)
class RadialStage:
    connection: Optional[str] = None
    period: str = "day"
    size: int = 640


@dataclass(frozen=True)
class RunConfig:
    seed: int
    profile: str = "fin2"
    input: Optional[str] = None
    output: str = "out"
    simulate: SimConfig = field(default_factory=SimConfig)
    states: StatesStage = field(default_factory=StatesStage)
    anomaly: AnomalyStage = field(default_factory=AnomalyStage)
    joints: JointParams = field(default_factory=JointParams)
    topo: TopoStage = field(default_factory=TopoStage)
    radial: RadialStage = field(default_factory=RadialStage)

    def sim_config(self) -> SimConfig:
        return dataclasses.replace(self.simulate, seed=self.seed, profile=self.profile)

    def dataset_dir(self, out: Optional[str] = None) -> Path:
        if self.input:
            return Path(self.input)
        return Path(out or self.output) / "dataset"


# -------------------------------------------------------------- conversion


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if tp is Any:
        return value
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return str(value)
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, "expected a mapping")
        return dict(value)
    return value


def _event(value, path: str) -> EventSpec:
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a mapping")
    v = dict(value)
    start = v.get("start")
    if isinstance(start, str):
        try:
            v["start"] = parse_timestamp(start)
        except ValueError as exc:
            raise ConfigError(f"{path}.start", str(exc)) from None
    if "band" in v:
        v["band"] = _convert(Tuple[int, int], v["band"], f"{path}.band")
    return _build(EventSpec, v, path)


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = f"{path}.{f.name}" if path else f.name
        if cls is SimConfig and f.name == "events":
            if not isinstance(data[f.name], list):
                raise ConfigError(sub, "expected a list")
            kwargs[f.name] = tuple(_event(e, f"{sub}[{i}]") for i, e in enumerate(data[f.name]))
            continue
        if cls is SimConfig and f.name == "start_date":
            kwargs[f.name] = str(data[f.name])
            continue
        kwargs[f.name] = _convert(hints[f.name], data[f.name], sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def _validate(cfg: RunConfig):
    if cfg.profile not in PROFILES:
        raise ConfigError("profile", f"must be one of {sorted(PROFILES)}")
    sim = cfg.simulate
    if sim.days < 1:
        raise ConfigError("simulate.days", "must be at least 1")
    try:
        epoch(sim.start_date)
    except ValueError:
        raise ConfigError("simulate.start_date", f"not an ISO date: {sim.start_date!r}") from None
    if sim.topology.n_nodes < 2:
        raise ConfigError("simulate.topology.n_nodes", "must be at least 2")
    if cfg.anomaly.metric not in ("mismatch01", "centroid_euclidean", "centroid_cosine"):
        raise ConfigError("anomaly.metric", f"unknown metric {cfg.anomaly.metric!r}")
    if not 0 < cfg.anomaly.split < 1:
        raise ConfigError("anomaly.split", "must lie in (0, 1)")
    if cfg.radial.period not in ("day", "year"):
        raise ConfigError("radial.period", "must be 'day' or 'year'")
    if cfg.topo.symmetrize_rule not in ("mean", "min", "max"):
        raise ConfigError("topo.symmetrize_rule", "must be mean, min or max")
    if cfg.states.sample_size < 2:
        raise ConfigError("states.sample_size", "must be at least 2")


def config_from_dict(data: dict, seed_override: Optional[int] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a mapping")
    data = dict(data)
    if seed_override is not None:
        data["seed"] = seed_override
    if "seed" not in data:
        raise ConfigError("seed", "missing required key")
    cfg = _build(RunConfig, data, "")
    _validate(cfg)
    return cfg


def load_config(path: Optional[Union[str, Path]], seed_override: Optional[int] = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"invalid YAML: {exc}") from None
    return config_from_dict(data, seed_override)


def to_plain(obj):
    """Dataclasses and numpy values as JSON-compatible structures."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
