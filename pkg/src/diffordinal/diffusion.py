"""Scalar diffusion head modelling p(y_j | C) for one binary decoding step.

The network is trained to predict the clean target y0 from a noised copy
``N_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps`` (abar = cumulative product of
alphas).  At sampling time the y0 prediction is turned into a noise estimate
and plugged into the usual DDPM reverse update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericalError

BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule over ``t = 1..T`` plus a respaced sampling chain.

    Arrays are indexed by ``t - 1``.  ``timesteps`` is the ascending respaced
    subset used at inference; ``chain_*`` arrays are aligned with it.
    """

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    timesteps: np.ndarray
    chain_alpha_bars: np.ndarray
    chain_prev_alpha_bars: np.ndarray
    chain_alphas: np.ndarray
    chain_sigmas: np.ndarray

    @property
    def inference_steps(self) -> int:
        return len(self.timesteps)

    def alpha_bar(self, t: torch.Tensor, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.alpha_bars, dtype=dtype)[t - 1]


def make_schedule(num_steps: int = 1000, inference_steps: int = 100) -> NoiseSchedule:
    if num_steps < 1 or not 1 <= inference_steps <= num_steps:
        raise ConfigError(
            f"need 1 <= inference_steps <= T, got T={num_steps}, inference_steps={inference_steps}"
        )
    betas = np.linspace(BETA_START, BETA_END, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    # uniform stride including both t=1 and t=T; spacing >= 1 keeps it strictly increasing
    timesteps = np.round(np.linspace(1, num_steps, inference_steps)).astype(np.int64)
    ab = alpha_bars[timesteps - 1]
    ab_prev = np.concatenate([[1.0], ab[:-1]])
    step_alphas = ab / ab_prev
    # posterior std of the coarse chain; zero at t=1 because abar_prev = 1 there
    sigmas = np.sqrt((1.0 - step_alphas) * (1.0 - ab_prev) / (1.0 - ab))
    return NoiseSchedule(
        num_steps=num_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        timesteps=timesteps,
        chain_alpha_bars=ab,
        chain_prev_alpha_bars=ab_prev,
        chain_alphas=step_alphas,
        chain_sigmas=sigmas,
    )


def forward_noise(y: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule):
    ab = schedule.alpha_bar(t, dtype=y.dtype)
    return ab.sqrt() * y + (1.0 - ab).sqrt() * eps


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class ResBlock(nn.Module):
    """``u + gate * FF(scale * LN(u) + shift)``, modulation computed from the condition."""

    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width, elementwise_affine=False, eps=1e-6)
        self.modulation = nn.Linear(width, 3 * width)
        self.ff = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, u: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        scale, shift, gate = self.modulation(nn.functional.silu(cond)).chunk(3, dim=-1)
        return u + gate * self.ff(scale * self.norm(u) + shift)


class Denoiser(nn.Module):
    """Residual MLP predicting the clean scalar target from ``(N_t, t, C)``."""

    def __init__(self, width: int = 256, depth: int = 3):
        super().__init__()
        self.width = width
        self.time_proj = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))
        self.in_proj = nn.Linear(1, width)
        self.blocks = nn.ModuleList(ResBlock(width) for _ in range(depth))
        self.out_proj = nn.Linear(width, 1)
        self.reset_modulation()

    def reset_modulation(self) -> None:
        # start every block as the identity map: scale 1, shift 0, gate 0
        for block in self.blocks:
            nn.init.zeros_(block.modulation.weight)
            nn.init.zeros_(block.modulation.bias)
            with torch.no_grad():
                block.modulation.bias[: self.width] = 1.0

    def forward(self, n_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        temb = self.time_proj(timestep_embedding(t, self.width).to(cond.dtype))
        c = cond + temb
        u = self.in_proj(n_t.unsqueeze(-1))
        for block in self.blocks:
            u = block(u, c)
        return self.out_proj(u).squeeze(-1)


DenoiseFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def diffusion_loss(
    denoise: DenoiseFn,
    y: torch.Tensor,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """Per-item squared error ``(y - denoise(N_t, t, C))**2``.

    ``t`` and ``eps`` are drawn (t uniform on 1..T, eps standard normal) unless
    given; fixing them makes the loss a deterministic function of parameters.
    """
    if y.numel() == 0:
        raise ValueError("empty batch")
    if t is None:
        t = torch.randint(1, schedule.num_steps + 1, y.shape, generator=generator)
    if eps is None:
        eps = torch.randn(y.shape, generator=generator, dtype=y.dtype)
    n_t = forward_noise(y, t, eps, schedule)
    return (y - denoise(n_t, t, cond)) ** 2


@torch.no_grad()
def reverse_sample(
    denoise: DenoiseFn,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    deterministic: bool = False,
) -> torch.Tensor:
    """Draw one y0 per row of ``cond`` by running the respaced chain from t=T down to t=1.

    ``deterministic`` zeroes the injected noise at every step (the start
    draw is still random).
    """
    n = cond.shape[0]
    y = torch.randn(n, generator=generator, dtype=cond.dtype)
    for i in reversed(range(schedule.inference_steps)):
        t = torch.full((n,), int(schedule.timesteps[i]), dtype=torch.long)
        ab = float(schedule.chain_alpha_bars[i])
        a = float(schedule.chain_alphas[i])
        y0_hat = denoise(y, t, cond)
        eps_hat = (y - math.sqrt(ab) * y0_hat) / math.sqrt(1.0 - ab)
        y = (y - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
        sigma = 0.0 if deterministic or i == 0 else float(schedule.chain_sigmas[i])
        if sigma > 0.0:
            y = y + sigma * torch.randn(n, generator=generator, dtype=cond.dtype)
        if not torch.isfinite(y).all():
            raise NumericalError(f"non-finite sample at t={int(schedule.timesteps[i])}")
    return y


def binarize(y0: torch.Tensor) -> torch.Tensor:
    """1 where ``y0 >= 0.5`` (ties go to 1), else 0."""
    return (y0 >= 0.5).long()
