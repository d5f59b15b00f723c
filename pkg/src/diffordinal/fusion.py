"""Prediction-history embedding and its fusion with the image feature.

A history is the token prefix ``[BOS, b1, ..., b_{j-1}]``.  Each token gets a
learned embedding plus a learned positional embedding.  Two fusions turn
``(x, history)`` into the condition vector ``C``:

* affine:           ``C = FC(x) * mean(history) + FC(x)``
* cross-attention:  ``C = softmax(q . k_i / sqrt(d)) @ v``  with
  ``q = W_Q FC(x)``, ``k_i = W_K h_i``, ``v_i = W_V h_i``

Batched calls take a boolean ``mask`` of shape ``(B, S, L)`` selecting, for each
of ``S`` decoding steps, which history slots are visible.  Teacher forcing
uses a lower-triangular mask so all ``K - 1`` steps come out of one pass.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .codec import TOKEN_IDS
from .errors import ConfigError

FUSION_MODES = ("affine", "cross_attention")


class Fusion(nn.Module):
    def __init__(
        self,
        feature_dim: int,
        width: int,
        num_classes: int,
        mode: str = "cross_attention",
        attention_skip: bool = True,
    ):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {mode!r}")
        self.mode = mode
        # adds FC(x) to the attention output; without it the first step's
        # condition cannot depend on x (softmax over the lone BOS slot is 1)
        self.attention_skip = attention_skip
        self.width = width
        self.num_classes = num_classes
        self.tok_emb = nn.Embedding(len(TOKEN_IDS), width)
        self.pos_emb = nn.Parameter(torch.randn(num_classes, width) * 0.02)
        self.fc = nn.Linear(feature_dim, width)
        self.w_q = nn.Linear(width, width, bias=False)
        self.w_k = nn.Linear(width, width, bias=False)
        self.w_v = nn.Linear(width, width, bias=False)

    @property
    def d_k(self) -> int:
        return self.width

    def embed_history(self, tokens: torch.Tensor) -> torch.Tensor:
        """``tokens`` (..., L) of ids in {0, 1, BOS} -> (..., L, W)."""
        length = tokens.shape[-1]
        if length > self.num_classes:
            raise ValueError(f"history length {length} exceeds {self.num_classes}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= len(TOKEN_IDS)):
            raise ValueError("history tokens must be 0, 1 or BOS (EOS is never embedded)")
        return self.tok_emb(tokens) + self.pos_emb[:length]

    def affine(self, x: torch.Tensor, hist: torch.Tensor, mask: torch.Tensor | None = None):
        fx = self.fc(x)
        if mask is None:
            return fx * hist.mean(dim=-2) + fx
        m = mask.to(hist.dtype)
        pooled = (m @ hist) / m.sum(-1, keepdim=True)
        return fx.unsqueeze(-2) * pooled + fx.unsqueeze(-2)

    def attention_weights(self, x: torch.Tensor, hist: torch.Tensor, mask: torch.Tensor | None = None):
        if hist.shape[-2] == 0:
            raise ValueError("cross-attention needs a non-empty history")
        q = self.w_q(self.fc(x))  # (B, W)
        k = self.w_k(hist)  # (B, L, W)
        logits = (k @ q.unsqueeze(-1)).squeeze(-1) / math.sqrt(self.d_k)  # (B, L)
        if mask is None:
            return torch.softmax(logits, dim=-1)
        logits = logits.unsqueeze(-2).expand(*mask.shape)
        return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)

    def cross_attention(self, x: torch.Tensor, hist: torch.Tensor, mask: torch.Tensor | None = None):
        w = self.attention_weights(x, hist, mask)
        v = self.w_v(hist)
        if mask is None:
            return (w.unsqueeze(-2) @ v).squeeze(-2)
        return w @ v

    def forward(self, x: torch.Tensor, tokens: torch.Tensor, mask: torch.Tensor | None = None):
        """Condition vectors for features ``x`` (B, D) and token prefixes (B, L)."""
        hist = self.embed_history(tokens)
        if self.mode == "affine":
            return self.affine(x, hist, mask)
        c = self.cross_attention(x, hist, mask)
        if self.attention_skip:
            fx = self.fc(x)
            c = c + (fx if mask is None else fx.unsqueeze(-2))
        return c


def causal_mask(num_steps: int, batch: int = 1) -> torch.Tensor:
    """(batch, S, S) mask where step ``j`` (0-based) sees slots ``0..j``."""
    return torch.ones(num_steps, num_steps, dtype=torch.bool).tril().expand(batch, -1, -1)
