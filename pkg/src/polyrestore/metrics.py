"""Classification metrics and restoration-side quality measures.

Ratios with a zero denominator are reported as None (explicitly undefined)
rather than silently coerced to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import TensorNode, no_grad


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, labels, positive_class=1) -> ConfusionCounts:
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.size == 0:
        raise ValueError("confusion: empty input")
    if preds.shape != labs.shape:
        raise ValueError(f"confusion: {preds.shape} predictions vs {labs.shape} labels")
    pos_pred = preds == positive_class
    pos_lab = labs == positive_class
    return ConfusionCounts(
        tp=int(np.sum(pos_pred & pos_lab)),
        tn=int(np.sum(~pos_pred & ~pos_lab)),
        fp=int(np.sum(pos_pred & ~pos_lab)),
        fn=int(np.sum(~pos_pred & pos_lab)),
    )


def _ratio(num, den):
    return None if den == 0 else num / den


def accuracy(counts: ConfusionCounts):
    return _ratio(counts.tp + counts.tn, counts.total)


def sensitivity(counts: ConfusionCounts):
    return _ratio(counts.tp, counts.tp + counts.fn)


def specificity(counts: ConfusionCounts):
    return _ratio(counts.tn, counts.tn + counts.fp)


def precision(counts: ConfusionCounts):
    return _ratio(counts.tp, counts.tp + counts.fp)


def f_beta(counts: ConfusionCounts, beta):
    """(1 + b^2) * P * S / (b^2 * P + S); equals P when P == S."""
    p = precision(counts)
    s = sensitivity(counts)
    if p is None or s is None:
        return None
    den = beta * beta * p + s
    if den == 0:
        return None
    return (1.0 + beta * beta) * p * s / den


def classify_testset(gen, samples, positive_class=1, batch_size=32) -> ConfusionCounts:
    """Route every sample through the poor-to-high generator's class head and
    score the argmax predictions."""
    if not samples:
        raise ValueError("classify_testset: no samples")
    preds = []
    labels = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            batch = np.stack([s.image for s in chunk])[:, None, :, :].astype(np.float32)
            out = gen.forward(TensorNode(batch))
            preds.extend(np.argmax(out.class_probs.values, axis=-1).tolist())
            labels.extend(s.label for s in chunk)
    return confusion(preds, labels, positive_class=positive_class)


def restore_iterative(gen, image, k=3):
    """Apply the poor-to-high generator k times and return the image output.

    Accepts an H x W array or an NCHW TensorNode; returns the same kind.
    """
    if k < 0:
        raise ValueError(f"restore_iterative: k must be >= 0, got {k}")
    is_array = not isinstance(image, TensorNode)
    if is_array:
        arr = np.asarray(image, dtype=np.float32)
        node = TensorNode(arr[None, None, :, :])
    else:
        node = image
    with no_grad():
        for _ in range(k):
            node = gen.forward(node).restored
    return node.values[0, 0] if is_array else node


def mean_l1(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mean_l1: shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def psnr(a, b, data_range=2.0):
    """Peak signal-to-noise ratio in dB; +inf for identical inputs.

    data_range defaults to 2.0 for images normalized to [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / err)
