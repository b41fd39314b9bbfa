"""Run configuration: one YAML document, validated against a fixed schema.

Schema (every section optional, defaults shown)::

    arch: factorized          # factorized | hyper
    model:   {N: 32, M: 48, Nh: 32, Mh: 32}
    grid:    {lambdas: [0.001, 0.01, 0.1], r: [2], rho: [10]}
    train:   {steps: 2000, batch: 8, patch: 64, lr: 0.001, seed: 0}
    data:    {train_dir: null, eval_dir: null}
    output_dir: null

Unknown keys at any level are rejected.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .codec import ARCHS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    N: int = 32
    M: int = 48
    Nh: int = 32
    Mh: int = 32


@dataclass(frozen=True)
class GridConfig:
    lambdas: tuple[float, ...] = (0.001, 0.01, 0.1)
    r: tuple[float, ...] = (2,)
    rho: tuple[float, ...] = (10,)


@dataclass(frozen=True)
class TrainSection:
    steps: int = 2000
    batch: int = 8
    patch: int = 64
    lr: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class DataSection:
    train_dir: str | None = None
    eval_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    arch: str = "factorized"
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    output_dir: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {k: list(v) for k, v in d["grid"].items()}
        return d


_SECTIONS = {"model": ModelConfig, "grid": GridConfig, "train": TrainSection, "data": DataSection}


def _number(where: str, v: Any, kind: type) -> Any:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _section(name: str, cls, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(map(str, unknown))}")
    vals = {}
    for key, v in raw.items():
        where = f"{name}.{key}"
        if cls is GridConfig:
            seq = v if isinstance(v, list) else [v]
            if not seq:
                raise ConfigError(f"{where}: empty list")
            vals[key] = tuple(_number(where, x, float) for x in seq)
        elif cls is DataSection:
            if v is not None and not isinstance(v, str):
                raise ConfigError(f"{where}: expected a path string")
            vals[key] = v
        else:
            vals[key] = _number(where, v, int if key != "lr" else float)
    return cls(**vals)


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.arch not in ARCHS:
        raise ConfigError(f"arch: expected one of {ARCHS}, got {cfg.arch!r}")
    for k, v in asdict(cfg.model).items():
        if v < 1:
            raise ConfigError(f"model.{k}: must be positive")
    g = cfg.grid
    if any(l <= 0 for l in g.lambdas):
        raise ConfigError("grid.lambdas: must be positive")
    if any(r < 1 for r in g.r):
        raise ConfigError("grid.r: must be >= 1")
    if any(not 0 < p <= 100 for p in g.rho):
        raise ConfigError("grid.rho: must lie in (0, 100]")
    t = cfg.train
    if t.steps < 0 or t.batch < 1 or t.lr <= 0 or t.seed < 0:
        raise ConfigError("train: steps >= 0, batch >= 1, lr > 0, seed >= 0 required")
    if t.patch < 16 or t.patch % 16:
        raise ConfigError("train.patch: must be a positive multiple of 16")
    return cfg


def from_dict(raw: Any) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {"arch", "output_dir", *_SECTIONS}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(map(str, unknown))}")
    kw: dict[str, Any] = {name: _section(name, cls, raw.get(name)) for name, cls in _SECTIONS.items()}
    if "arch" in raw:
        kw["arch"] = raw["arch"]
    if raw.get("output_dir") is not None:
        if not isinstance(raw["output_dir"], str):
            raise ConfigError("output_dir: expected a path string")
        kw["output_dir"] = raw["output_dir"]
    return validate(RunConfig(**kw))


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return validate(RunConfig())
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def override(cfg: RunConfig, **changes) -> RunConfig:
    """Apply flat CLI overrides (``None`` means not given), then revalidate."""
    sec: dict[str, dict] = {name: {} for name in _SECTIONS}
    top = {}
    where = {f.name: s for s, cls in _SECTIONS.items() for f in fields(cls)}
    for k, v in changes.items():
        if v is None:
            continue
        if k in ("arch", "output_dir"):
            top[k] = v
        elif k in where:
            sec[where[k]][k] = tuple(v) if isinstance(v, list) else v
        else:
            raise ConfigError(f"unknown override {k}")
    for name, vals in sec.items():
        if vals:
            top[name] = replace(getattr(cfg, name), **vals)
    return validate(replace(cfg, **top))
