"""Seed streams, optimisation steps and evaluation loops."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericalError
from .metrics import MetricsReport, confusion, report
from .model import OrdinalModel, PredictionTrace

STREAMS = ("data", "init", "diffusion-train", "diffusion-sample", "eval")


def stream_seed(master: int, name: str, *index: int) -> int:
    """Derive an independent 63-bit seed for a named stream (and optional sub-index)."""
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; expected one of {STREAMS}")
    key = (STREAMS.index(name), *index)
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, np.uint64)[0] >> 1)


def generator(master: int, name: str, *index: int) -> torch.Generator:
    return torch.Generator().manual_seed(stream_seed(master, name, *index))


def make_optimizer(model: OrdinalModel, lr: float = 1e-3) -> torch.optim.Optimizer:
    return torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=lr)


@dataclass
class StepStats:
    loss: float
    step_losses: list[float]
    num_terms: int


def train_step(model: OrdinalModel, optimizer, x: torch.Tensor, labels: torch.Tensor, gen=None) -> StepStats:
    """One update on the mean loss over every (example, step) pair."""
    if len(labels) == 0:
        raise ValueError("empty batch")
    model.train()
    losses = model.step_losses(x, labels, gen)  # label validation happens before any mutation
    loss = losses.mean()
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite training loss {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return StepStats(float(loss.detach()), losses.detach().mean(0).tolist(), losses.numel())


def train_epoch(model, optimizer, x: torch.Tensor, y: torch.Tensor, batch_size: int, seed: int, epoch: int) -> dict:
    """Shuffled pass over the data; randomness is a function of (seed, epoch) only."""
    order = torch.randperm(len(y), generator=generator(seed, "data", epoch))
    noise_gen = generator(seed, "diffusion-train", epoch)
    total, per_step, count = 0.0, None, 0
    for start in range(0, len(y), batch_size):
        idx = order[start:start + batch_size]
        stats = train_step(model, optimizer, x[idx], y[idx], noise_gen)
        n = len(idx)
        total += stats.loss * n
        steps = np.asarray(stats.step_losses) * n
        per_step = steps if per_step is None else per_step + steps
        count += n
    return {"epoch": epoch, "loss": total / count, "step_losses": (per_step / count).tolist()}


def predict_all(model: OrdinalModel, x: torch.Tensor, gen=None, samples_per_step: int = 5,
                batch_size: int = 250) -> PredictionTrace:
    model.eval()
    parts = [model.predict(x[i:i + batch_size], gen, samples_per_step) for i in range(0, len(x), batch_size)]
    return PredictionTrace(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                             ("samples", "means", "bits", "classes", "valid")))


def evaluate(model: OrdinalModel, x: torch.Tensor, y: np.ndarray, gen=None, samples_per_step: int = 5,
             batch_size: int = 250) -> tuple[MetricsReport, PredictionTrace]:
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    trace = predict_all(model, x, gen, samples_per_step, batch_size)
    cm = confusion(np.asarray(y), trace.classes, model.num_classes)
    return report(cm, invalid_sequence_rate=float((~trace.valid).mean())), trace


def fit(model: OrdinalModel, x: torch.Tensor, y: torch.Tensor, epochs: int, batch_size: int = 32,
        seed: int = 0, lr: float = 1e-3, optimizer=None) -> list[dict]:
    """Plain multi-epoch training loop; returns the per-epoch log."""
    optimizer = optimizer or make_optimizer(model, lr)
    return [train_epoch(model, optimizer, x, y, batch_size, seed, e) for e in range(epochs)]
