"""Report files: flat text, JSON document, per-class breakdown CSV and SVG chart."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsReport  # noqa: E402

SUMMARY_KEYS = ("accuracy", "macro_f1", "sensitivity", "specificity", "invalid_sequence_rate")


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def flat_text(rep: MetricsReport, meta: dict | None = None) -> str:
    lines = [f"{k} = {v}" for k, v in (meta or {}).items()]
    lines += [f"{k} = {_fmt(v)}" for k, v in rep.flat().items()]
    lines.append("")
    lines.append("class  support  correct%  adjacent%  other%")
    for c, b in enumerate(rep.breakdown):
        cells = ("-", "-", "-") if b is None else tuple(f"{v:.2f}" for v in b)
        lines.append(f"{c:>5}  {rep.support[c]:>7}  {cells[0]:>8}  {cells[1]:>9}  {cells[2]:>6}")
    return "\n".join(lines) + "\n"


def breakdown_csv(rep: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "support", "correct_pct", "adjacent_pct", "other_pct"])
    for c, b in enumerate(rep.breakdown):
        if b is not None:
            w.writerow([c, rep.support[c], *(repr(v) for v in b)])
    return buf.getvalue()


def breakdown_svg(rep: MetricsReport, path: Path, title: str = "") -> None:
    """Stacked correct / adjacent / other bars per class, written as standalone SVG."""
    classes = [c for c, b in enumerate(rep.breakdown) if b is not None]
    parts = list(zip(*(rep.breakdown[c] for c in classes))) if classes else [(), (), ()]
    with plt.rc_context({"svg.hashsalt": "diffordinal", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        bottom = [0.0] * len(classes)
        for label, vals, color in zip(("correct", "adjacent", "other"), parts, ("#4c956c", "#f2c14e", "#d1495b")):
            ax.bar([str(c) for c in classes], vals, bottom=bottom, label=label, color=color)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_xlabel("true class")
        ax.set_ylabel("% of class")
        ax.set_ylim(0, 100)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_report(rep: MetricsReport, out_dir: str | Path, meta: dict | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "text": out / "report.txt",
        "csv": out / "breakdown.csv",
        "svg": out / "breakdown.svg",
    }
    doc = {"meta": meta or {}, "metrics": rep.to_dict()}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths["text"].write_text(flat_text(rep, meta))
    paths["csv"].write_text(breakdown_csv(rep))
    breakdown_svg(rep, paths["svg"], title=(meta or {}).get("head", ""))
    return paths


def load_report(path: str | Path) -> tuple[MetricsReport, dict]:
    doc = json.loads(Path(path).read_text())
    return MetricsReport.from_dict(doc["metrics"]), doc.get("meta", {})


def comparison_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table, one row per run."""
    header = ["run", *SUMMARY_KEYS]
    body = [[name, *(_fmt(getattr(rep, k)) for k in SUMMARY_KEYS)] for name, rep in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header, *body]]
    return "\n".join(lines) + "\n"


def comparison_csv(rows: list[tuple[str, MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", *SUMMARY_KEYS])
    for name, rep in rows:
        w.writerow([name, *(getattr(rep, k) for k in SUMMARY_KEYS)])
    return buf.getvalue()
