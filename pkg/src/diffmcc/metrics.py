"""Thresholded confusion counts, percentage metrics and precision-recall sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricPoint:
    """Metrics at one threshold, all in percent."""

    threshold: float
    recall: float
    precision: float
    f1: float
    mcc: float


@dataclass(frozen=True)
class PRCurve:
    points: tuple[MetricPoint, ...]
    best: int

    @property
    def best_point(self) -> MetricPoint:
        return self.points[self.best]

    @property
    def thresholds(self) -> list[float]:
        return [p.threshold for p in self.points]


def confusion(pred, y, threshold: float) -> ConfusionCounts:
    """Counts with the rule ``positive iff pred >= threshold``."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    hit = pred >= threshold
    tp = int(np.count_nonzero(hit & y))
    fp = int(np.count_nonzero(hit & ~y))
    fn = int(np.count_nonzero(~hit & y))
    return ConfusionCounts(tp, fp, fn, len(y) - tp - fp - fn)


def mcc_value(tp: float, fp: float, fn: float, tn: float) -> float:
    """MCC as a fraction; 0 when any marginal is empty."""
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def f1_value(tp: float, fp: float, fn: float) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def point_metrics(c: ConfusionCounts, threshold: float = float("nan")) -> MetricPoint:
    if c.total <= 0:
        raise ValueError("no samples")
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricPoint(threshold, 100 * recall, 100 * precision, 100 * f1, 100 * mcc_value(c.tp, c.fp, c.fn, c.tn))


def sweep(pred, y, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> PRCurve:
    """One metric point per threshold; ``best`` is the highest F1 (ties go to the lowest threshold)."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("no thresholds")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    pos = np.sort(pred[y])
    neg = np.sort(pred[~y])
    t = np.asarray(thresholds)
    tp = len(pos) - np.searchsorted(pos, t, side="left")
    fp = len(neg) - np.searchsorted(neg, t, side="left")
    points = tuple(
        point_metrics(ConfusionCounts(int(a), int(b), len(pos) - int(a), len(neg) - int(b)), thr)
        for thr, a, b in zip(thresholds, tp, fp)
    )
    best = max(range(len(points)), key=lambda i: (points[i].f1, -i))
    return PRCurve(points, best)


CURVE_HEADER = ("threshold", "recall_pct", "precision_pct", "f1_pct", "mcc_pct")


def write_curve_csv(curve: PRCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for p in curve.points:
            w.writerow([f"{p.threshold:.4f}", f"{p.recall:.6f}", f"{p.precision:.6f}", f"{p.f1:.6f}", f"{p.mcc:.6f}"])


def read_curve_csv(path) -> PRCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    points = tuple(
        MetricPoint(float(r["threshold"]), float(r["recall_pct"]), float(r["precision_pct"]), float(r["f1_pct"]), float(r["mcc_pct"]))
        for r in rows
    )
    best = max(range(len(points)), key=lambda i: (points[i].f1, -i))
    return PRCurve(points, best)


def format_table(columns: dict[str, MetricPoint | str], extra: dict[str, dict[str, str]] | None = None) -> str:
    """Plain-text table with one column per model: threshold, recall, precision, F1, MCC rows."""
    rows = [("Best Threshold", "threshold"), ("Recall (%)", "recall"), ("Precision (%)", "precision"),
            ("F1 Score (%)", "f1"), ("MCC (%)", "mcc")]
    names = list(columns)

    def cell(col, attr):
        v = columns[col]
        if extra and col in extra and attr in extra[col]:
            return extra[col][attr]
        if attr == "threshold":
            return "N/A" if math.isnan(v.threshold) else f"{v.threshold:.2f}"
        return f"{getattr(v, attr):.2f}"

    grid = [["Metric", *names]] + [[label, *(cell(c, a) for c in names)] for label, a in rows]
    widths = [max(len(r[i]) for r in grid) for i in range(len(grid[0]))]
    lines = [" | ".join(s.rjust(w) if i else s.ljust(w) for i, (s, w) in enumerate(zip(r, widths))) for r in grid]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
