"""Global feature vectors: a small trainable encoder and the feature-file format.

Feature file layout::

    # comment lines are skipped
    D=<int> K=<int>
    <label>,<v1>,...,<vD>
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, IngestionError


class Encoder(nn.Module):
    """Two-layer perceptron ``in_dim -> hidden -> out_dim`` with SiLU in between.

    Stands in for an image backbone; only its output contract (a fixed-width
    global feature) matters downstream.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, trainable: bool = True):
        super().__init__()
        if min(in_dim, hidden, out_dim) < 1:
            raise ConfigError(f"encoder dims must be >= 1, got {(in_dim, hidden, out_dim)}")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)
        self.act = nn.SiLU()
        self.set_trainable(trainable)

    def set_trainable(self, trainable: bool) -> None:
        self.trainable = trainable
        for p in self.parameters():
            p.requires_grad_(trainable)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"encoder expects input dim {self.in_dim}, got {x.shape[-1]}")
        return self.fc2(self.act(self.fc1(x)))


class IdentityEncoder(nn.Module):
    """Pass-through for precomputed features."""

    trainable = False

    def __init__(self, dim: int):
        super().__init__()
        self.in_dim = self.out_dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"expected feature dim {self.in_dim}, got {x.shape[-1]}")
        return x


@dataclass
class FeatureSet:
    x: np.ndarray  # (N, D) float64
    y: np.ndarray  # (N,) int64
    num_classes: int

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.y)


def write_feature_file(path: str | Path, x: np.ndarray, y: np.ndarray, num_classes: int) -> None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"shape mismatch: x {x.shape}, y {y.shape}")
    lines = [f"D={x.shape[1]} K={num_classes}"]
    for label, row in zip(y, x):
        lines.append(",".join([str(int(label)), *(format(v, ".9g") for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str, lineno: int) -> tuple[int, int]:
    fields = {}
    for part in line.split():
        key, sep, val = part.partition("=")
        if not sep or key not in ("D", "K"):
            raise IngestionError(f"line {lineno}: malformed header {line!r}")
        try:
            fields[key] = int(val)
        except ValueError:
            raise IngestionError(f"line {lineno}: malformed header {line!r}") from None
    if set(fields) != {"D", "K"} or fields["D"] < 1 or fields["K"] < 2:
        raise IngestionError(f"line {lineno}: header needs D>=1 and K>=2, got {line!r}")
    return fields["D"], fields["K"]


def load_feature_file(path: str | Path) -> FeatureSet:
    header = None
    xs, ys = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = _parse_header(line, lineno)
                continue
            dim, k = header
            parts = line.split(",")
            if len(parts) != dim + 1:
                raise IngestionError(f"line {lineno}: expected {dim + 1} fields, got {len(parts)}")
            try:
                label = int(parts[0])
                values = [float(v) for v in parts[1:]]
            except ValueError as e:
                raise IngestionError(f"line {lineno}: {e}") from None
            if not 0 <= label < k:
                raise IngestionError(f"line {lineno}: label {label} outside [0, {k - 1}]")
            if not all(math.isfinite(v) for v in values):
                raise IngestionError(f"line {lineno}: non-finite value")
            xs.append(values)
            ys.append(label)
    if header is None:
        raise IngestionError(f"{path}: missing 'D=<int> K=<int>' header")
    dim, k = header
    x = np.array(xs, dtype=np.float64).reshape(len(xs), dim)
    return FeatureSet(x=x, y=np.array(ys, dtype=np.int64), num_classes=k)
