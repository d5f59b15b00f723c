"""Cumulative binary codes for ordinal labels.

Class ``k`` out of ``K`` becomes ``K - 1`` indicators "label > j", i.e. ``k``
leading ones followed by zeros.  Sequences seen by the decoder are wrapped in
BOS/EOS sentinels.
"""

from __future__ import annotations

from typing import Sequence

BOS = "BOS"
EOS = "EOS"

# integer ids used by the embedding tables; EOS never reaches a table
TOKEN_IDS = {0: 0, 1: 1, BOS: 2}


def _check(k: int, num_classes: int) -> None:
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if not 0 <= k < num_classes:
        raise ValueError(f"label {k} outside [0, {num_classes - 1}]")


def encode_label(k: int, num_classes: int) -> list[int]:
    _check(k, num_classes)
    return [1] * k + [0] * (num_classes - 1 - k)


def is_valid(bits: Sequence[int]) -> bool:
    """True when the bits are non-increasing (all ones precede all zeros)."""
    return all(a >= b for a, b in zip(bits, bits[1:]))


def decode_code(bits: Sequence[int]) -> tuple[int, bool]:
    """Return ``(class, valid)``.

    The class is the number of leading ones; anything after the first zero is
    ignored, so every bit pattern decodes to a class in ``[0, len(bits)]``.
    """
    if len(bits) < 1:
        raise ValueError("code must contain at least one bit")
    k = 0
    for b in bits:
        if b != 1:
            break
        k += 1
    return k, is_valid(bits)


def to_token_sequence(bits: Sequence[int]) -> list:
    if not is_valid(bits):
        raise ValueError(f"invalid cumulative code {list(bits)}")
    return [BOS, *bits, EOS]
