"""Experiment configuration: dataclass tree, strict YAML loading and overrides.

Config files must name every key. A file may start from another file with
``extends: other.yaml`` (path relative to the including file) and then list
only the keys it changes.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    manifest: Optional[str] = None  # null: generate synthetic pools inside the run dir
    count: int = 200
    size: int = 256
    heldout: Optional[int] = None
    seed: int = 7


@dataclass
class LPNetConfig:
    depth: int = 4  # 0 disables the light prior entirely
    epochs: int = 200
    batch: int = 16
    crop: int = 256
    lr: float = 1e-3
    lr_final: float = 5e-4
    decay_epochs: int = 100


@dataclass
class LossConfig:
    cycle: bool = True
    gan: bool = True
    identity: bool = True
    lambda1: float = 10.0
    lambda2: float = 5.0


@dataclass
class TrainConfig:
    epochs: int = 300
    batch: int = 16
    crop: int = 256
    gen_lr: float = 2e-4
    disc_lr_multiplier: float = 2.0
    constant_epochs: int = 200
    decay_epochs: int = 100
    base_channels: int = 64
    disc_channels: int = 64
    container_capacity: Optional[int] = None
    checkpoint_every: int = 10
    lpnet_checkpoint: Optional[str] = None
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class EvalConfig:
    area: Optional[int] = 598400  # None: score at native resolution
    ocr_command: Optional[str] = None


@dataclass
class Config:
    run_dir: str = "runs/default"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    lpnet: LPNetConfig = field(default_factory=LPNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        # loss lives at the top level of config files
        d["loss"] = d["train"].pop("loss")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> "Config":
        t, lp = self.train, self.lpnet
        if t.epochs < 1 or lp.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        for name, v in [("train.gen_lr", t.gen_lr), ("lpnet.lr", lp.lr),
                        ("train.disc_lr_multiplier", t.disc_lr_multiplier)]:
            if not v > 0:
                raise ConfigError(f"{name} must be > 0, got {v}")
        if lp.lr_final < 0:
            raise ConfigError("lpnet.lr_final must be >= 0")
        if not 0 <= t.constant_epochs <= t.epochs or t.decay_epochs < 0:
            raise ConfigError("train schedule breakpoints must lie within [0, epochs]")
        if t.constant_epochs + t.decay_epochs > t.epochs:
            raise ConfigError("train.constant_epochs + train.decay_epochs exceeds train.epochs")
        if not 0 <= lp.decay_epochs <= lp.epochs:
            raise ConfigError("lpnet.decay_epochs must lie within [0, lpnet.epochs]")
        if lp.depth not in (0, 1, 2, 3, 4):
            raise ConfigError(f"lpnet.depth must be 0..4, got {lp.depth}")
        if self.loss.lambda1 < 0 or self.loss.lambda2 < 0:
            raise ConfigError("loss weights must be >= 0")
        if t.container_capacity is not None and t.container_capacity < 1:
            raise ConfigError("train.container_capacity must be positive")
        if t.batch < 1 or lp.batch < 1 or t.crop < 1 or lp.crop < 1:
            raise ConfigError("batch and crop sizes must be positive")
        return self


_SECTIONS = {"data": DataConfig, "lpnet": LPNetConfig, "train": TrainConfig,
             "loss": LossConfig, "eval": EvalConfig}


def _field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls) if not (cls is TrainConfig and f.name == "loss")]


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _read_tree(path: Path, seen=()) -> dict:
    if path in seen:
        raise ConfigError(f"circular extends chain through {path}")
    try:
        tree = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    parent = tree.pop("extends", None)
    if parent is not None:
        tree = _deep_merge(_read_tree((path.parent / parent).resolve(), seen + (path,)), tree)
    return tree


def from_dict(tree: dict, strict: bool = True) -> Config:
    """Build a Config; with ``strict`` every key must be present."""
    tree = copy.deepcopy(tree)
    known_top = {"run_dir", "seed", *_SECTIONS}
    for k in tree:
        if k not in known_top:
            raise ConfigError(f"unknown config key: {k}")
    for k in ("run_dir", "seed"):
        if strict and k not in tree:
            raise ConfigError(f"missing config key: {k}")
    sections = {}
    for name, cls in _SECTIONS.items():
        sub = tree.get(name)
        if sub is None:
            if strict:
                raise ConfigError(f"missing config section: {name}")
            sub = {}
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {name} must be a mapping")
        names = _field_names(cls)
        for k in sub:
            if k not in names:
                raise ConfigError(f"unknown config key: {name}.{k}")
        if strict:
            for k in names:
                if k not in sub:
                    raise ConfigError(f"missing config key: {name}.{k}")
        sections[name] = cls(**sub)
    train = sections["train"]
    train.loss = sections["loss"]
    cfg = Config(
        run_dir=tree.get("run_dir", Config.run_dir),
        seed=tree.get("seed", Config.seed),
        data=sections["data"], lpnet=sections["lpnet"], train=train, eval=sections["eval"],
    )
    return cfg.validate()


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(tree: dict, overrides) -> dict:
    tree = copy.deepcopy(tree)
    for item in overrides or ():
        keys, value = parse_override(item) if isinstance(item, str) else item
        node = tree
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override below scalar key {'.'.join(keys)}")
        node[keys[-1]] = value
    return tree


def load_config(path, overrides=(), strict: bool = True) -> Config:
    """Read a YAML config (following ``extends``) and apply ``key=value`` overrides."""
    tree = _read_tree(Path(path).resolve())
    return from_dict(apply_overrides(tree, overrides), strict=strict)


def dump_config(cfg: Config, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
