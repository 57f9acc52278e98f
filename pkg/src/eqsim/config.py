"""One JSON run-configuration file driving every command.

Top-level sections (all optional; defaults shown in README):
    seed            master seed for datagen worker seeds
    model           group_variant, encoder/decoder/processor, ablation flags
    mpm             simulator constants
    datagen         scene randomization (objects, counts, frames, dt, ...)
    train_stage1    stage-1 optimization
    train_stage2    stage-2 optimization
    eval            step schedule and split

Unknown keys anywhere are rejected with the offending key path. The sha256
hash of the canonical config JSON is stamped into every produced artifact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .model import ModelConfig
from .mpm import MpmConfig, SceneConfig
from .serialization import (
    canonical_json,
    config_hash,
    dataclass_from_dict,
    dataclass_to_dict,
)
from .training import TrainConfig


@dataclass
class EvalConfig:
    schedule: list = field(default_factory=lambda: [1, 5, 10, 15, 20, 25])
    split: str = "val"

    def __post_init__(self):
        if sorted(self.schedule) != list(self.schedule) or not self.schedule:
            raise ValidationError("eval schedule must be non-empty and ascending")


def _default_stage2() -> TrainConfig:
    return TrainConfig(stage=2)


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    mpm: MpmConfig = field(default_factory=MpmConfig)
    datagen: SceneConfig = field(default_factory=SceneConfig)
    train_stage1: TrainConfig = field(default_factory=TrainConfig)
    train_stage2: TrainConfig = field(default_factory=_default_stage2)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.train_stage1.stage != 1:
            raise ValidationError("train_stage1.stage must be 1")
        if self.train_stage2.stage != 2:
            raise ValidationError("train_stage2.stage must be 2")


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides (values parsed as JSON, falling back
    to plain strings)."""
    for ov in overrides:
        if "=" not in ov:
            raise ValidationError(f"override must look like key.path=value: {ov!r}")
        key, _, raw = ov.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override path {key!r} crosses a leaf")
        node[parts[-1]] = value
    return data


def run_config_from_dict(data: dict) -> RunConfig:
    return dataclass_from_dict(RunConfig, data)


def load_run_config(path, overrides=()) -> tuple:
    """Load, override, validate. Returns (RunConfig, resolved dict, hash)."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"config is not valid JSON: {e}") from e
    data = apply_overrides(data, overrides)
    cfg = run_config_from_dict(data)
    resolved = dataclass_to_dict(cfg)
    return cfg, resolved, config_hash(resolved)


def write_default_config(path):
    resolved = dataclass_to_dict(RunConfig())
    Path(path).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


__all__ = [
    "EvalConfig",
    "RunConfig",
    "apply_overrides",
    "canonical_json",
    "config_hash",
    "load_run_config",
    "run_config_from_dict",
    "write_default_config",
]
