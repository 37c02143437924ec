"""Run configuration: nested dataclasses loaded strictly from JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"config key {key!r}: {reason}")
        self.key = key


@dataclass
class Dims:
    gin_hidden: int = 64
    graph_dim: int = 64
    text_dim: int = 64
    proj_dim: int = 32
    lm_dim: int = 64
    lm_blocks: int = 2
    lm_heads: int = 4
    text_blocks: int = 2
    text_heads: int = 4
    heads: int = 4
    head_dim: int = 16
    slots: int = 64


@dataclass
class TrainConfig:
    steps: int = 300
    lr: float = 0.05
    batch_size: int = 16
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0
    temperature: float = 0.07
    weight_decay: float = 0.0


@dataclass
class SplitConfig:
    train: float = 0.8
    valid: float = 0.1
    test: float = 0.1


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str = ""
    corpus: str = ""
    template: str = ""
    dims: Dims = field(default_factory=Dims)
    backbone: TrainConfig = field(default_factory=lambda: TrainConfig(steps=200, lr=0.05, batch_size=16))
    stage1: TrainConfig = field(default_factory=lambda: TrainConfig(steps=300, lr=0.05, batch_size=32))
    stage2: TrainConfig = field(default_factory=lambda: TrainConfig(steps=500, lr=0.02, batch_size=16))
    fewshot: TrainConfig = field(default_factory=lambda: TrainConfig(steps=100, lr=0.02, batch_size=8))
    split: SplitConfig = field(default_factory=SplitConfig)
    stage2_tasks: list = field(default_factory=lambda: ["atom_count"])
    fewshot_task: str = "hetero_count"
    fraction: float = 0.05


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}{key}", "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value, hint, key = data[f.name], hints[f.name], f"{path}{f.name}"
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, value, key + ".")
        elif hint is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, "expected a number")
            kwargs[f.name] = float(value)
        elif hint is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(key, "expected an integer")
            kwargs[f.name] = value
        elif hint is str:
            if not isinstance(value, str):
                raise ConfigError(key, "expected a string")
            kwargs[f.name] = value
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def _validate(cfg: RunConfig):
    for section in ("backbone", "stage1", "stage2", "fewshot"):
        tc = getattr(cfg, section)
        for name in ("steps", "lr", "batch_size", "temperature"):
            if getattr(tc, name) <= 0:
                raise ConfigError(f"{section}.{name}", "must be positive")
        if tc.weight_decay < 0:
            raise ConfigError(f"{section}.weight_decay", "must be non-negative")
    for f in dataclasses.fields(Dims):
        if getattr(cfg.dims, f.name) <= 0:
            raise ConfigError(f"dims.{f.name}", "must be positive")
    if cfg.dims.lm_dim % cfg.dims.lm_heads or cfg.dims.text_dim % cfg.dims.text_heads:
        raise ConfigError("dims", "width must divide evenly into heads")
    ratios = (cfg.split.train, cfg.split.valid, cfg.split.test)
    if min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split", "ratios must be positive and sum to 1")
    if not 0 < cfg.fraction <= 1:
        raise ConfigError("fraction", "must lie in (0, 1]")
    if not isinstance(cfg.stage2_tasks, list) or not cfg.stage2_tasks:
        raise ConfigError("stage2_tasks", "expected a non-empty list")


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return from_dict(data)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg) -> str:
    """Hash of the fully-resolved config; key order in the source file is irrelevant."""
    data = to_dict(cfg) if dataclasses.is_dataclass(cfg) else cfg
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:16]
