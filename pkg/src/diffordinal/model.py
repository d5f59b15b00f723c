"""Autoregressive ordinal models: diffusion head, CE head and a flat softmax head.

All three share the same surface: ``step_losses`` returns a ``(B, S)`` matrix
of per-(example, step) losses, ``predict`` returns a :class:`PredictionTrace`.
Training teacher-forces the ``K - 1`` binary steps on ground-truth prefixes;
inference always runs every step on the model's own emitted bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import codec
from .diffusion import Denoiser, NoiseSchedule, binarize, diffusion_loss, reverse_sample
from .errors import NumericalError
from .features import Encoder, IdentityEncoder
from .fusion import Fusion, causal_mask

HEADS = ("diffusion", "ar_ce", "softmax")


@dataclass
class PredictionTrace:
    """Batched decoding record.

    ``samples`` is (B, K-1, S): raw per-step draws (or probabilities for the
    deterministic heads); ``means`` their average; ``bits`` the binarized means.
    """

    samples: np.ndarray
    means: np.ndarray
    bits: np.ndarray
    classes: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.classes)

    @classmethod
    def from_bits(cls, samples: torch.Tensor, means: torch.Tensor, bits: torch.Tensor):
        bits_np = bits.numpy().astype(np.int64)
        decoded = [codec.decode_code(list(row)) for row in bits_np]
        return cls(
            samples=samples.numpy(),
            means=means.numpy(),
            bits=bits_np,
            classes=np.array([k for k, _ in decoded], dtype=np.int64),
            valid=np.array([v for _, v in decoded], dtype=bool),
        )


def label_bits(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(B,) class indices -> (B, K-1) cumulative codes."""
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes - 1}]")
    thresholds = torch.arange(num_classes - 1)
    return (labels.unsqueeze(-1) > thresholds).long()


def teacher_tokens(bits: torch.Tensor) -> torch.Tensor:
    """Ground-truth prefix tokens ``[BOS, b1, ..., b_{K-2}]`` per example."""
    bos = torch.full((bits.shape[0], 1), codec.TOKEN_IDS[codec.BOS], dtype=torch.long)
    return torch.cat([bos, bits[:, :-1]], dim=1)


class OrdinalModel(nn.Module):
    head: str

    def __init__(self, encoder: nn.Module, num_classes: int):
        super().__init__()
        self.encoder = encoder
        self.num_classes = num_classes

    @property
    def num_steps(self) -> int:
        return self.num_classes - 1


class _ARModel(OrdinalModel):
    def __init__(self, encoder: nn.Module, fusion: Fusion, num_classes: int):
        super().__init__(encoder, num_classes)
        self.fusion = fusion

    def teacher_conditions(self, x: torch.Tensor, labels: torch.Tensor):
        """Conditions (B, K-1, W) for every step on ground-truth prefixes, and targets (B, K-1)."""
        bits = label_bits(labels, self.num_classes)
        feats = self.encoder(x)
        cond = self.fusion(feats, teacher_tokens(bits), causal_mask(self.num_steps, len(labels)))
        return cond, bits.to(cond.dtype)

    def _decode(self, x: torch.Tensor, step_fn) -> PredictionTrace:
        """Run all K-1 steps; ``step_fn(cond, j) -> (samples (B, S), means (B,))``."""
        feats = self.encoder(x)
        tokens = torch.full((len(x), 1), codec.TOKEN_IDS[codec.BOS], dtype=torch.long)
        all_samples, all_means, all_bits = [], [], []
        for j in range(self.num_steps):
            cond = self.fusion(feats, tokens)
            samples, means = step_fn(cond, j)
            bits = binarize(means)
            all_samples.append(samples)
            all_means.append(means)
            all_bits.append(bits)
            tokens = torch.cat([tokens, bits.unsqueeze(-1)], dim=1)
        return PredictionTrace.from_bits(
            torch.stack(all_samples, 1), torch.stack(all_means, 1), torch.stack(all_bits, 1)
        )


class DiffusionAR(_ARModel):
    head = "diffusion"

    def __init__(self, encoder, fusion: Fusion, denoiser: Denoiser, schedule: NoiseSchedule, num_classes: int):
        super().__init__(encoder, fusion, num_classes)
        self.denoiser = denoiser
        self.schedule = schedule

    def step_losses(self, x, labels, generator=None, t=None, eps=None):
        cond, target = self.teacher_conditions(x, labels)
        b, s, w = cond.shape
        flat = diffusion_loss(
            self.denoiser, target.reshape(-1), cond.reshape(-1, w), self.schedule, generator,
            t=None if t is None else t.reshape(-1), eps=None if eps is None else eps.reshape(-1),
        )
        return flat.reshape(b, s)

    @torch.no_grad()
    def predict(self, x, generator=None, samples_per_step: int = 5, deterministic: bool = False):
        if samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")

        def step(cond, j):
            try:
                y0 = reverse_sample(
                    self.denoiser, cond.repeat_interleave(samples_per_step, 0), self.schedule,
                    generator, deterministic=deterministic,
                )
            except NumericalError as e:
                raise NumericalError(f"decoding step {j + 1}: {e}") from e
            y0 = y0.reshape(len(cond), samples_per_step)
            return y0, y0.mean(dim=1)

        return self._decode(x, step)


class CeAR(_ARModel):
    """Same fusion pipeline with a per-step logistic head trained by cross-entropy."""

    head = "ar_ce"

    def __init__(self, encoder, fusion: Fusion, num_classes: int):
        super().__init__(encoder, fusion, num_classes)
        self.out = nn.Linear(fusion.width, 1)

    def step_losses(self, x, labels, generator=None):
        cond, target = self.teacher_conditions(x, labels)
        logits = self.out(cond).squeeze(-1)
        return nn.functional.binary_cross_entropy_with_logits(logits, target, reduction="none")

    @torch.no_grad()
    def predict(self, x, generator=None, samples_per_step: int = 1):
        def step(cond, j):
            p = torch.sigmoid(self.out(cond).squeeze(-1))
            return p.unsqueeze(-1), p

        return self._decode(x, step)


class SoftmaxClassifier(OrdinalModel):
    """Flat K-way linear head on the encoder output."""

    head = "softmax"

    def __init__(self, encoder, feature_dim: int, num_classes: int):
        super().__init__(encoder, num_classes)
        self.out = nn.Linear(feature_dim, num_classes)

    def logits(self, x):
        return self.out(self.encoder(x))

    def step_losses(self, x, labels, generator=None):
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes - 1}]")
        return nn.functional.cross_entropy(self.logits(x), labels, reduction="none").unsqueeze(-1)

    @torch.no_grad()
    def predict(self, x, generator=None, samples_per_step: int = 1):
        probs = torch.softmax(self.logits(x), dim=-1)
        # argmax returns the first maximal index, i.e. ties go to the smaller class
        classes = probs.argmax(dim=-1)
        # P(label > j) keeps the trace comparable with the autoregressive heads
        exceed = probs.flip(-1).cumsum(-1).flip(-1)[:, 1:]
        bits = label_bits(classes, self.num_classes)
        return PredictionTrace(
            samples=exceed.unsqueeze(-1).numpy(),
            means=exceed.numpy(),
            bits=bits.numpy(),
            classes=classes.numpy().astype(np.int64),
            valid=np.ones(len(classes), dtype=bool),
        )


def build_model(
    head: str,
    in_dim: int,
    num_classes: int,
    *,
    feature_dim: int = 64,
    width: int = 256,
    depth: int = 3,
    encoder: str = "mlp",
    encoder_hidden: int = 128,
    encoder_trainable: bool = True,
    fusion_mode: str = "cross_attention",
    attention_skip: bool = True,
    schedule: NoiseSchedule | None = None,
) -> OrdinalModel:
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}, got {head!r}")
    if encoder == "mlp":
        enc = Encoder(in_dim, encoder_hidden, feature_dim, trainable=encoder_trainable)
    elif encoder == "none":
        enc = IdentityEncoder(in_dim)
        feature_dim = in_dim
    else:
        raise ValueError(f"encoder must be 'mlp' or 'none', got {encoder!r}")
    if head == "softmax":
        return SoftmaxClassifier(enc, feature_dim, num_classes)
    fusion = Fusion(feature_dim, width, num_classes, mode=fusion_mode, attention_skip=attention_skip)
    if head == "ar_ce":
        return CeAR(enc, fusion, num_classes)
    if schedule is None:
        raise ValueError("diffusion head needs a noise schedule")
    return DiffusionAR(enc, fusion, Denoiser(width, depth), schedule, num_classes)
