"""Run configuration: defaults < YAML file < command-line flags."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .diffusion import make_schedule
from .errors import ConfigError
from .fusion import FUSION_MODES
from .model import HEADS

# fields that determine parameter shapes or the training objective
ARCH_FIELDS = (
    "head", "fusion_mode", "attention_skip", "num_classes", "feature_dim", "width", "depth",
    "encoder", "encoder_hidden", "encoder_trainable", "diffusion_steps",
)


@dataclass
class RunConfig:
    head: str = "diffusion"
    fusion_mode: str = "cross_attention"
    attention_skip: bool = True
    num_classes: int = 5
    feature_dim: int = 64
    width: int = 256
    depth: int = 3
    encoder: str = "mlp"
    encoder_hidden: int = 128
    encoder_trainable: bool = True
    diffusion_steps: int = 1000
    inference_steps: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int | None = None
    samples_per_step: int = 5
    seed: int = 0
    threads: int = 1
    data: str | None = None
    test_data: str | None = None
    checkpoint: str = "runs/model.pt"
    report_dir: str = "runs/report"

    def validate(self, *, training: bool = False) -> "RunConfig":
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg} (got {getattr(self, name)!r})")

        if self.head not in HEADS:
            bad("head", f"must be one of {HEADS}")
        if self.fusion_mode not in FUSION_MODES:
            bad("fusion_mode", f"must be one of {FUSION_MODES}")
        if self.encoder not in ("mlp", "none"):
            bad("encoder", "must be 'mlp' or 'none'")
        if self.num_classes < 2:
            bad("num_classes", "must be >= 2")
        for name in ("feature_dim", "width", "encoder_hidden", "batch_size", "threads"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if self.depth < 0:
            bad("depth", "must be >= 0")
        if self.diffusion_steps < 1:
            bad("diffusion_steps", "must be >= 1")
        if not 1 <= self.inference_steps <= self.diffusion_steps:
            bad("inference_steps", f"must be in [1, diffusion_steps={self.diffusion_steps}]")
        if self.samples_per_step < 1:
            bad("samples_per_step", "must be >= 1")
        if not self.lr > 0:
            bad("lr", "must be > 0")
        if training:
            if self.epochs is None or self.epochs < 1:
                bad("epochs", "is required for training and must be >= 1")
            if not self.data:
                bad("data", "training needs a feature file")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def arch_hash(self) -> str:
        arch = {k: getattr(self, k) for k in ARCH_FIELDS}
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]

    def schedule(self):
        return make_schedule(self.diffusion_steps, self.inference_steps)

    def model_kwargs(self) -> dict:
        return dict(
            feature_dim=self.feature_dim, width=self.width, depth=self.depth, encoder=self.encoder,
            encoder_hidden=self.encoder_hidden, encoder_trainable=self.encoder_trainable,
            fusion_mode=self.fusion_mode, attention_skip=self.attention_skip,
            schedule=self.schedule() if self.head == "diffusion" else None,
        )


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def from_mapping(values: dict, base: RunConfig | None = None) -> RunConfig:
    unknown = set(values) - set(FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = (base or RunConfig()).to_dict()
    merged.update(values)
    return RunConfig(**merged)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            values = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        cfg = from_mapping(values, cfg)
    if overrides:
        cfg = from_mapping({k: v for k, v in overrides.items() if v is not None}, cfg)
    return cfg


def arch_diff(a: dict, b: dict) -> list[str]:
    return [f"{k}: {a.get(k)!r} != {b.get(k)!r}" for k in ARCH_FIELDS if a.get(k) != b.get(k)]
