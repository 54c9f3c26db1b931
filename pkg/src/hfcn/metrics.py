"""Confusion-matrix segmentation metrics: IoU, mean IoU, pixel accuracies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ConfusionMatrix", "MetricsReport", "compute_report"]


class ConfusionMatrix:
    """C x C counts; entry (g, p) = pixels with ground truth g predicted as p."""

    def __init__(self, num_classes: int, ignore_index: int | None = None):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt) -> ConfusionMatrix:
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        keep = gt != self.ignore_index if self.ignore_index is not None else np.ones(gt.shape, bool)
        g, p = gt[keep].astype(np.int64), pred[keep].astype(np.int64)
        C = self.num_classes
        if g.size and (g.max() >= C or p.max() >= C or g.min() < 0 or p.min() < 0):
            raise ValueError(f"class index outside [0, {C})")
        self.counts += np.bincount(g * C + p, minlength=C * C).reshape(C, C)
        return self

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different class counts")
        out = ConfusionMatrix(self.num_classes, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def report(self) -> MetricsReport:
        return compute_report(self)


@dataclass
class MetricsReport:
    """Undefined values are NaN."""

    iou: np.ndarray
    mean_iou: float
    pixel_accuracy: float
    mean_class_accuracy: float
    pixels: int

    def to_dict(self) -> dict:
        def clean(v):
            return None if math.isnan(v) else float(v)

        return {
            "mean_iou": clean(self.mean_iou),
            "mean_pixel_accuracy": clean(self.mean_class_accuracy),
            "pixel_accuracy": clean(self.pixel_accuracy),
            "per_class_iou": [clean(v) for v in self.iou],
            "pixels": self.pixels,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self, class_names=None) -> str:
        def pct(v):
            return "   n/a" if math.isnan(v) else f"{100 * v:6.2f}"

        names = class_names or [f"class{c}" for c in range(len(self.iou))]
        width = max(len(n) for n in names)
        lines = [f"{'Mean IoU (%)':<22}{pct(self.mean_iou)}",
                 f"{'Mean pix.acc (%)':<22}{pct(self.mean_class_accuracy)}",
                 f"{'Pixel acc (%)':<22}{pct(self.pixel_accuracy)}",
                 f"{'Evaluated pixels':<22}{self.pixels:>6d}"]
        lines += [f"  IoU {n:<{width}} {pct(v)}" for n, v in zip(names, self.iou)]
        return "\n".join(lines)


def compute_report(cm: ConfusionMatrix) -> MetricsReport:
    m = cm.counts.astype(np.float64)
    tp = np.diag(m)
    fp = m.sum(axis=0) - tp
    fn = m.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = tp + fp + fn
        iou = np.where(denom > 0, tp / denom, np.nan)
        support = tp + fn
        recall = np.where(support > 0, tp / support, np.nan)
    total = m.sum()

    def nanmean(v):
        v = v[~np.isnan(v)]
        return float(v.mean()) if v.size else math.nan

    return MetricsReport(
        iou=iou,
        mean_iou=nanmean(iou),
        pixel_accuracy=float(tp.sum() / total) if total > 0 else math.nan,
        mean_class_accuracy=nanmean(recall),
        pixels=int(total),
    )
