"""Run configuration: one YAML document with nested sections.

Command-line overrides use dotted keys (``train.epochs=5``) and the
``GFARS_SEED`` environment variable replaces every seed in the document.
The resolved configuration is written next to each run's outputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import ModelConfig
from .sampler import SamplerConfig
from .sde import DomainError, SdeSchedule
from .synthdata import DatasetManifest
from .train import TrainConfig

SEED_ENV = "GFARS_SEED"


class ConfigFileError(ValueError):
    pass


@dataclass
class DataConfig:
    train: str = "data/train.jsonl"
    val: str = "data/val.jsonl"
    test: str = "data/test.jsonl"
    train_sets: int = 2000
    val_sets: int = 100
    test_sets: int = 300
    mix2_prob: float = 0.7
    n_points: int = 64
    seed: int = 0

    def manifest(self, split: str) -> DatasetManifest:
        sets = {"train": self.train_sets, "val": self.val_sets, "test": self.test_sets}[split]
        return DatasetManifest(split, sets, {2: self.mix2_prob, 3: 1.0 - self.mix2_prob}, self.seed, self.n_points)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sde: SdeSchedule = field(default_factory=SdeSchedule)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "data": dict(self.data.__dict__),
            "model": self.model.to_dict(),
            "sde": {"sigma": self.sde.sigma, "T": self.sde.T, "t_min": self.sde.t_min},
            "sampler": dict(self.sampler.__dict__),
            "train": self.train.to_dict(),
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"data", "model", "sde", "sampler", "train", "output"}
        if unknown:
            raise ConfigFileError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                data=_fill(DataConfig, d.get("data", {}), "data"),
                model=ModelConfig.from_dict(d.get("model", {})),
                sde=_fill(SdeSchedule, d.get("sde", {}), "sde"),
                sampler=_fill(SamplerConfig, d.get("sampler", {}), "sampler"),
                train=_fill(TrainConfig, d.get("train", {}), "train"),
                output=str(d.get("output", "runs/default")),
            )
        except (TypeError, ValueError, DomainError) as exc:
            if isinstance(exc, ConfigFileError):
                raise
            raise ConfigFileError(str(exc)) from None


def _fill(cls, section: dict, name: str):
    if not isinstance(section, dict):
        raise ConfigFileError(f"section {name!r} must be a mapping")
    extra = set(section) - set(cls.__dataclass_fields__)
    if extra:
        raise ConfigFileError(f"unknown keys in {name!r}: {sorted(extra)}")
    return cls(**section)


def _set_dotted(d: dict, key: str, value: Any) -> None:
    *path, leaf = key.split(".")
    node = d
    for p in path:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigFileError(f"cannot override {key!r}: {p!r} is not a section")
    node[leaf] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigFileError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads "5e-4" (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    return key.strip(), value


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """Read YAML (or start from defaults), apply overrides, then the seed env var."""
    raw: dict = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigFileError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigFileError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigFileError(f"{path}: top level must be a mapping")
    raw = RunConfig.from_dict(raw).to_dict()
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_dotted(raw, key, value)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigFileError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        for section in ("data", "sampler", "train"):
            raw[section]["seed"] = seed
    return RunConfig.from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
