"""Confusion-matrix metrics for ordinal classification.

Per-class quantities are computed in exact rational arithmetic and converted
to floats once, so results do not depend on summation order.

Conventions for degenerate denominators:

* macro averages run over classes that occur among the true labels;
* precision is 0 when a class is never predicted, F1 is 0 when P + R = 0;
* specificity is 1 when a class has no negatives (no false positive possible).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np


def confusion(true: Iterable[int], pred: Iterable[int], num_classes: int) -> np.ndarray:
    """K x K counts, rows = true class, columns = predicted class."""
    t = np.asarray(list(true) if not isinstance(true, np.ndarray) else true, dtype=np.int64)
    p = np.asarray(list(pred) if not isinstance(pred, np.ndarray) else pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} label outside [0, {num_classes - 1}]")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _ratio(num: int, den: int, default: Fraction) -> Fraction:
    return Fraction(num, den) if den else default


@dataclass
class MetricsReport:
    num_classes: int
    total: int
    accuracy: float
    macro_f1: float
    sensitivity: float
    specificity: float
    support: list[int]
    precision: list[float]
    recall: list[float]
    class_specificity: list[float]
    f1: list[float]
    # per class (correct%, adjacent%, other%); None for classes absent from the true labels
    breakdown: list[tuple[float, float, float] | None]
    confusion: list[list[int]]
    invalid_sequence_rate: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def present(self) -> list[int]:
        return [c for c, n in enumerate(self.support) if n > 0]

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["breakdown"] = [list(b) if b is not None else None for b in self.breakdown]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["breakdown"] = [tuple(b) if b is not None else None for b in d["breakdown"]]
        return cls(**d)

    def flat(self) -> dict[str, float | int | None]:
        """Flat key/value view used for the text report."""
        out: dict[str, float | int | None] = {
            "total": self.total,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "invalid_sequence_rate": self.invalid_sequence_rate,
        }
        for c in range(self.num_classes):
            out[f"class{c}.support"] = self.support[c]
            out[f"class{c}.precision"] = self.precision[c]
            out[f"class{c}.recall"] = self.recall[c]
            out[f"class{c}.specificity"] = self.class_specificity[c]
            out[f"class{c}.f1"] = self.f1[c]
            b = self.breakdown[c]
            if b is not None:
                out[f"class{c}.correct_pct"], out[f"class{c}.adjacent_pct"], out[f"class{c}.other_pct"] = b
        return out


def report(cm: np.ndarray, invalid_sequence_rate: float | None = None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    if cm.shape != (k, k) or (cm < 0).any():
        raise ValueError("confusion matrix must be square with non-negative counts")
    total = int(cm.sum())
    support = [int(cm[c].sum()) for c in range(k)]
    predicted = [int(cm[:, c].sum()) for c in range(k)]

    prec, rec, spec, f1, breakdown = [], [], [], [], []
    for c in range(k):
        tp = int(cm[c, c])
        fn = support[c] - tp
        fp = predicted[c] - tp
        tn = total - tp - fn - fp
        p = _ratio(tp, tp + fp, Fraction(0))
        r = _ratio(tp, tp + fn, Fraction(0))
        prec.append(p)
        rec.append(r)
        spec.append(_ratio(tn, tn + fp, Fraction(1)))
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
        if support[c]:
            adjacent = sum(int(cm[c, a]) for a in (c - 1, c + 1) if 0 <= a < k)
            correct = Fraction(100 * tp, support[c])
            adj = Fraction(100 * adjacent, support[c])
            breakdown.append((float(correct), float(adj), float(100 - correct - adj)))
        else:
            breakdown.append(None)

    present = [c for c in range(k) if support[c]]

    def macro(vals: list[Fraction]) -> float:
        if not present:
            return 0.0
        return float(sum((vals[c] for c in present), Fraction(0)) / len(present))

    return MetricsReport(
        num_classes=k,
        total=total,
        accuracy=float(Fraction(int(np.trace(cm)), total)) if total else 0.0,
        macro_f1=macro(f1),
        sensitivity=macro(rec),
        specificity=macro(spec),
        support=support,
        precision=[float(v) for v in prec],
        recall=[float(v) for v in rec],
        class_specificity=[float(v) for v in spec],
        f1=[float(v) for v in f1],
        breakdown=breakdown,
        confusion=cm.tolist(),
        invalid_sequence_rate=invalid_sequence_rate,
    )
