"""Per-pixel soft weights, weighted squared-error cost and the composite loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ForwardBundle
from .tensor import Tensor, add, make_node, scale

__all__ = [
    "LAMBDA_GROUPS",
    "LossBreakdown",
    "one_hot",
    "soft_weights",
    "soft_cost",
    "composite_loss",
    "validate_lambdas",
]

LAMBDA_GROUPS = {
    "model1": (0.0, 0.0, 0.0, 0.0, 0.0),
    "model2": (1.0, 1.0, 1.0, 1.0, 1.0),
    "model3": (0.5, 0.5, 0.5, 0.5, 0.5),
    "model4": (0.2, 0.2, 0.2, 0.2, 0.2),
    "model5": (0.1, 0.1, 0.1, 0.1, 0.1),
    "model6": (1.0, 0.0, 0.0, 0.0, 0.0),
    "model7": (0.5, 0.5, 0.0, 0.0, 0.0),
    "model8": (0.33, 0.33, 0.33, 0.0, 0.0),
    "model9": (0.25, 0.25, 0.25, 0.25, 0.0),
}


def validate_lambdas(lambdas) -> tuple[float, ...]:
    lam = tuple(float(v) for v in lambdas)
    if len(lam) != 5:
        raise ValueError(f"expected 5 pre-output proportions, got {len(lam)}")
    if any(not 0.0 <= v <= 1.0 for v in lam):
        raise ValueError(f"pre-output proportions must lie in [0, 1]: {lam}")
    return lam


def soft_weights(labels: np.ndarray, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    """Per-pixel weights for an ``(N, H, W)`` label batch.

    Computed per image: background (class 0) pixels weigh 1, pixels of a
    target class n weigh ``max(total / count_n, 2)`` where ``total`` counts
    all non-ignored pixels, and ignored pixels weigh 0.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    weights = np.zeros(labels.shape)
    for k, img in enumerate(labels):
        valid = img != ignore_index if ignore_index is not None else np.ones(img.shape, bool)
        counts = np.bincount(img[valid].ravel(), minlength=num_classes)
        if counts.size > num_classes:
            raise ValueError(f"label value >= {num_classes} in image {k}")
        total = counts.sum()
        per_class = np.ones(num_classes)
        present = counts[1:] > 0
        per_class[1:][present] = np.maximum(total / counts[1:][present], 2.0)
        w = weights[k]
        w[valid] = per_class[img[valid]]
    return weights


def one_hot(labels: np.ndarray, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    """(N, H, W) labels to (N, C, H, W); ignored pixels become all-zero."""
    labels = np.asarray(labels)
    y = (labels[:, None] == np.arange(num_classes)[None, :, None, None]).astype(np.float64)
    if ignore_index is not None and ignore_index < num_classes:
        y[np.broadcast_to((labels == ignore_index)[:, None], y.shape)] = 0.0
    return y


def soft_cost(pred: Tensor, labels: np.ndarray, weights: np.ndarray, ignore_index: int | None = None) -> Tensor:
    """Weighted squared error ``0.5 * w * (pred - onehot)**2`` summed over
    classes and averaged over every pixel of the batch."""
    n, c, h, w = pred.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w) or weights.shape != (n, h, w):
        raise ValueError(f"soft_cost: pred {pred.shape} vs labels {labels.shape} / weights {weights.shape}")
    y = one_hot(labels, c, ignore_index)
    diff = pred.data - y
    wb = weights[:, None]
    count = n * h * w
    value = np.array(0.5 * np.sum(wb * diff * diff) / count).reshape(1, 1, 1, 1)
    return make_node(value, (pred,), lambda g: (g.item() * wb * diff / count,), "soft_cost")


@dataclass
class LossBreakdown:
    final: float
    pre_outputs: tuple[float, ...]
    lambdas: tuple[float, ...]
    composite: float
    loss: Tensor | None = None

    def as_row(self) -> list[float]:
        return [self.composite, self.final, *self.pre_outputs]


def composite_loss(bundle: ForwardBundle, labels: np.ndarray, lambdas, ignore_index: int | None = None) -> LossBreakdown:
    lam = validate_lambdas(lambdas)
    num_classes = bundle.final_output.shape[1]
    weights = soft_weights(labels, num_classes, ignore_index)
    l_fo = soft_cost(bundle.final_output, labels, weights, ignore_index)
    l_po = [soft_cost(p, labels, weights, ignore_index) for p in bundle.pre_outputs]
    total = l_fo
    for lam_i, l_i in zip(lam, l_po):
        total = add(total, scale(l_i, lam_i))
    return LossBreakdown(
        final=l_fo.data.item(),
        pre_outputs=tuple(l.data.item() for l in l_po),
        lambdas=lam,
        composite=total.data.item(),
        loss=total,
    )
