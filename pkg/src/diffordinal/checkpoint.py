"""Versioned single-file checkpoints written atomically (temp file + rename).

Layout (a ``torch.save`` dict)::

    format: "diffordinal-checkpoint"   version: 1
    package_version, config (full echo), config_hash (architecture fields)
    in_dim, epoch (completed epochs), log (per-epoch loss records)
    model, optimizer (state dicts)
    schedule: {diffusion_steps, inference_steps, alpha_bars}
    seeds: {master, streams: {name: derived seed}}
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import torch

from . import __version__
from .config import RunConfig, arch_diff, from_mapping
from .errors import ConfigError
from .model import OrdinalModel, build_model
from .training import STREAMS, make_optimizer, stream_seed

FORMAT = "diffordinal-checkpoint"
VERSION = 1


def atomic_write(path: str | Path, write) -> None:
    """Call ``write(tmp_path)`` then rename over ``path``; readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_checkpoint(path, model: OrdinalModel, optimizer, cfg: RunConfig, in_dim: int, epoch: int, log: list) -> None:
    sched = cfg.schedule()
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.arch_hash(),
        "in_dim": in_dim,
        "epoch": epoch,
        "log": log,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "schedule": {
            "diffusion_steps": sched.num_steps,
            "inference_steps": sched.inference_steps,
            "alpha_bars": torch.from_numpy(sched.alpha_bars),
        },
        "seeds": {"master": cfg.seed, "streams": {s: stream_seed(cfg.seed, s) for s in STREAMS}},
    }
    atomic_write(path, lambda tmp: torch.save(payload, tmp))


def load_checkpoint(path) -> dict:
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise ConfigError(f"{path}: not a readable checkpoint ({e})") from None
    if not isinstance(ckpt, dict) or ckpt.get("format") != FORMAT:
        raise ConfigError(f"{path}: not a {FORMAT} file")
    if ckpt.get("version") != VERSION:
        raise ConfigError(f"{path}: checkpoint version {ckpt.get('version')} unsupported (expected {VERSION})")
    return ckpt


def check_compatible(ckpt: dict, cfg: RunConfig) -> None:
    if ckpt["config_hash"] != cfg.arch_hash():
        diffs = arch_diff(ckpt["config"], cfg.to_dict())
        raise ConfigError("checkpoint/config mismatch: " + "; ".join(diffs or ["config hash differs"]))


def restore(ckpt: dict, cfg: RunConfig | None = None):
    """Rebuild ``(model, optimizer, cfg)`` from a checkpoint.

    ``cfg`` defaults to the echoed config; if given it must match the
    checkpoint's architecture fields.
    """
    if cfg is None:
        cfg = from_mapping(ckpt["config"])
    check_compatible(ckpt, cfg)
    model = build_model(cfg.head, ckpt["in_dim"], cfg.num_classes, **cfg.model_kwargs())
    model.load_state_dict(ckpt["model"])
    optimizer = make_optimizer(model, cfg.lr)
    optimizer.load_state_dict(ckpt["optimizer"])
    return model, optimizer, cfg
