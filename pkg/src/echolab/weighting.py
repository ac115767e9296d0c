"""Sample-weight arithmetic for the echo-chamber biased model and its target.

Biased-model weights start at one and are multiplied by ``alpha`` each round
a sample is misclassified (only in classes whose error rate is under
``t_error``). The target model uses their capped inverse, re-balanced so that
every class carries the same total weight.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Inverse weights saturate after 7 halvings at alpha=0.5; see README.
DEFAULT_CAP = 128.0


@dataclass
class WeightVector:
    weights: np.ndarray
    epoch_count: int = 0

    @classmethod
    def ones(cls, n: int) -> "WeightVector":
        return cls(np.ones(n), 0)

    def __len__(self):
        return len(self.weights)


@dataclass
class ClassErrorReport:
    per_class_error: np.ndarray
    per_sample_correct: np.ndarray


def class_errors(predictions, labels, n_classes: int | None = None) -> ClassErrorReport:
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    if pred.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {missing} have no samples; error rate undefined")
    correct = pred == y
    wrong = np.bincount(y, weights=~correct, minlength=n_classes)
    return ClassErrorReport(wrong / counts, correct)


def echo_update(w: WeightVector, report: ClassErrorReport, labels, alpha: float,
                t_error: float) -> WeightVector:
    """Decay misclassified samples of sufficiently well-learned classes by ``alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 < t_error <= 1.0:
        raise ValueError(f"t_error must lie in (0, 1], got {t_error}")
    y = np.asarray(labels)
    if len(y) != len(w) or len(report.per_sample_correct) != len(w):
        raise ValueError("weights, labels and report differ in length")
    gated = report.per_class_error[y] < t_error
    decay = gated & ~report.per_sample_correct
    out = w.weights.copy()
    out[decay] *= alpha
    return WeightVector(out, w.epoch_count + 1)


def invert(w: WeightVector, cap: float = DEFAULT_CAP) -> WeightVector:
    if cap < 1:
        raise ValueError("inversion cap must be >= 1")
    x = w.weights
    if np.any(x <= 0):
        raise ValueError("cannot invert non-positive weights")
    return WeightVector(np.minimum(1.0 / x, cap), w.epoch_count)


def class_balance(w: WeightVector, labels, n_classes: int | None = None,
                  rescale: bool = True) -> WeightVector:
    """Scale each class by prod_g S_g / S_c so all class sums equal prod_g S_g.

    With ``rescale`` the result is then multiplied by one constant so the mean
    weight is 1; this keeps class sums equal and within-class ratios intact,
    and sidesteps overflow of the product for large weights.
    """
    y = np.asarray(labels)
    x = np.asarray(w.weights, dtype=np.float64)
    if len(y) != len(x):
        raise ValueError("weights and labels differ in length")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    sums = np.bincount(y, weights=x, minlength=n_classes)
    present = np.bincount(y, minlength=n_classes) > 0
    sums = sums[present]
    if np.any(sums <= 0):
        raise ValueError("a class has zero total weight")
    factor = np.zeros(n_classes)
    if rescale:
        # prod(S) cancels under the final rescale: class c ends up at N / (C' * S_c).
        factor[present] = len(x) / (present.sum() * sums)
    else:
        factor[present] = np.prod(sums) / sums
    return WeightVector(x * factor[y], w.epoch_count)


def debiased_weights(w: WeightVector, labels, cap: float = DEFAULT_CAP,
                     n_classes: int | None = None, balance: bool = True,
                     rescale: bool = True) -> WeightVector:
    inv = invert(w, cap)
    if not balance:
        return inv
    return class_balance(inv, labels, n_classes, rescale=rescale)


def lff_weight(loss_biased, loss_target):
    """L_B / (L_B + L_D); works elementwise on arrays."""
    lb = np.asarray(loss_biased, dtype=np.float64)
    ld = np.asarray(loss_target, dtype=np.float64)
    if np.any(lb < 0) or np.any(ld < 0):
        raise ValueError("losses must be non-negative")
    denom = lb + ld
    if np.any(denom == 0):
        raise ValueError("both losses zero: weight undefined")
    out = lb / denom
    return float(out) if out.ndim == 0 else out


def write_weight_snapshots(path, snapshots) -> None:
    """``snapshots`` is an iterable of (epoch, weights) pairs."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "sample_index", "weight"])
        for epoch, weights in snapshots:
            for i, v in enumerate(np.asarray(weights)):
                wr.writerow([epoch, i, "%.17g" % v])
