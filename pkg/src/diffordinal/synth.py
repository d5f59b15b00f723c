"""Synthetic long-tailed ordinal data with a known Bayes ceiling.

Class ``c`` is drawn with probability proportional to ``tail_ratio**c``; a
latent ``z ~ N(c, ambiguity**2)`` is lifted into ``dim`` dimensions by a fixed
random affine map plus small isotropic noise.  Adjacent classes overlap in
``z``, so most confusions are between neighbours.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .features import write_feature_file

LIFT_NOISE_STD = 0.1  # eta ~ N(0, 0.01 I)
_SPLIT_KEYS = {"train": 1, "test": 2}


@dataclass
class SynthConfig:
    num_classes: int = 5
    n_total: int = 5000
    dim: int = 32
    tail_ratio: float = 0.5
    ambiguity: float = 0.35
    seed: int = 0
    n_test: int = 1000

    def validate(self) -> "SynthConfig":
        if self.num_classes < 2:
            raise ConfigError(f"num_classes: must be >= 2, got {self.num_classes}")
        if self.n_total < self.num_classes:
            raise ConfigError(f"n_total: must be >= num_classes ({self.num_classes}), got {self.n_total}")
        if self.n_test and self.n_test < self.num_classes:
            raise ConfigError(f"n_test: must be 0 or >= num_classes, got {self.n_test}")
        if self.dim < 1:
            raise ConfigError(f"dim: must be >= 1, got {self.dim}")
        if not 0.0 < self.tail_ratio <= 1.0:
            raise ConfigError(f"tail_ratio: must be in (0, 1], got {self.tail_ratio}")
        if not self.ambiguity > 0.0:
            raise ConfigError(f"ambiguity: must be > 0, got {self.ambiguity}")
        return self

    def class_priors(self) -> np.ndarray:
        w = self.tail_ratio ** np.arange(self.num_classes, dtype=np.float64)
        return w / w.sum()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    x: np.ndarray  # (N, dim)
    y: np.ndarray  # (N,)
    z: np.ndarray | None  # (N,) latents, needed by the Bayes oracle

    def __len__(self) -> int:
        return len(self.y)


def _rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def lift_params(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = _rng(cfg.seed, 0)
    return rng.standard_normal(cfg.dim), rng.standard_normal(cfg.dim)


def generate(cfg: SynthConfig, split: str = "train") -> SynthDataset:
    cfg.validate()
    n = cfg.n_total if split == "train" else cfg.n_test
    k = cfg.num_classes
    rng = _rng(cfg.seed, _SPLIT_KEYS[split])
    y = rng.choice(k, size=n, p=cfg.class_priors())
    missing = [c for c in range(k) if not (y == c).any()]
    if missing:
        y[n - len(missing):] = missing
    z = y + cfg.ambiguity * rng.standard_normal(n)
    a, b = lift_params(cfg)
    x = np.outer(z, a) + b + LIFT_NOISE_STD * rng.standard_normal((n, cfg.dim))
    return SynthDataset(x=x, y=y.astype(np.int64), z=z)


def bayes_predict(cfg: SynthConfig, z: np.ndarray) -> np.ndarray:
    classes = np.arange(cfg.num_classes)
    log_post = np.log(cfg.class_priors()) - (z[:, None] - classes) ** 2 / (2 * cfg.ambiguity**2)
    return log_post.argmax(axis=1)


def bayes_accuracy(cfg: SynthConfig, data: SynthDataset) -> float:
    """Accuracy of the posterior-argmax rule applied to the true latents."""
    if data.z is None:
        raise ValueError("dataset carries no latents; regenerate it with generate()")
    return float((bayes_predict(cfg, data.z) == data.y).mean())


def write_dataset(data: SynthDataset, cfg: SynthConfig, features_path: Path, latents_path: Path) -> None:
    write_feature_file(features_path, data.x, data.y, cfg.num_classes)
    write_feature_file(latents_path, data.z[:, None], data.y, cfg.num_classes)
