"""Group-level evaluation and training diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ALIGNED, CONFLICTING, LabeledDataset, all_groups, alignment_patterns
from .nn import MlpModel, forward, per_sample_ce, predict


@dataclass
class GroupMetrics:
    per_group_acc: dict[str, float]
    per_alignment_acc: dict[str, float]
    avg_group_acc: float
    worst_group_acc: float

    @property
    def n_biases(self) -> int:
        return len(next(iter(self.per_alignment_acc)))

    def bias_gaps(self) -> list[float]:
        return [bias_gap(self, k) for k in range(self.n_biases)]

    def avg_bias_gap(self) -> float:
        return float(np.mean(self.bias_gaps()))


@dataclass
class PseudoLabelReport:
    threshold: float | None
    n_flagged: int
    precision: float
    recall: float
    f1: float


def group_accuracy_from_predictions(predictions, dataset: LabeledDataset) -> GroupMetrics:
    pred = np.asarray(predictions)
    if pred.shape != dataset.targets.shape:
        raise ValueError("predictions do not match dataset size")
    correct = pred == dataset.targets
    keys = dataset.group_keys()
    akeys = dataset.alignment_keys()
    per_group = {}
    for g in all_groups(dataset.n_classes, dataset.n_biases):
        mask = keys == g.key
        if not mask.any():
            raise ValueError(f"group {g.key} is empty")
        per_group[g.key] = float(correct[mask].mean())
    per_align = {}
    for p in alignment_patterns(dataset.n_biases):
        mask = akeys == p
        if not mask.any():
            raise ValueError(f"alignment pattern {p} is empty")
        per_align[p] = float(correct[mask].mean())
    vals = list(per_group.values())
    return GroupMetrics(per_group, per_align, float(np.mean(vals)), float(min(vals)))


def group_accuracy(model: MlpModel, dataset: LabeledDataset) -> GroupMetrics:
    return group_accuracy_from_predictions(predict(model, dataset.features), dataset)


def bias_gap(metrics: GroupMetrics, k: int) -> float:
    """Mean |acc(bias k aligned) - acc(bias k conflicting)| over the other biases' patterns."""
    n = metrics.n_biases
    if not 0 <= k < n:
        raise ValueError(f"bias index {k} outside [0, {n})")
    acc = metrics.per_alignment_acc
    diffs = []
    for rest in alignment_patterns(n - 1):
        a = rest[:k] + ALIGNED + rest[k:]
        c = rest[:k] + CONFLICTING + rest[k:]
        diffs.append(abs(acc[a] - acc[c]))
    return float(np.mean(diffs))


def flag_quality(flags, dataset: LabeledDataset, threshold=None) -> PseudoLabelReport:
    """Precision/recall/F1 of ``flags`` against the hidden conflicting mask."""
    flags = np.asarray(flags, dtype=bool)
    truth = dataset.conflicting_mask()
    if flags.shape != truth.shape:
        raise ValueError("flags do not match dataset size")
    tp = int(np.sum(flags & truth))
    n_flag = int(flags.sum())
    n_true = int(truth.sum())
    precision = tp / n_flag if n_flag else 0.0
    recall = tp / n_true if n_true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
    return PseudoLabelReport(threshold, n_flag, precision, recall, f1)


def pseudo_label_quality(weights, dataset: LabeledDataset, threshold: float) -> PseudoLabelReport:
    """Flag samples with weight below ``threshold`` as bias-conflicting."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    w = getattr(weights, "weights", weights)
    return flag_quality(np.asarray(w) < threshold, dataset, threshold)


def loss_rank_flags(model: MlpModel, features, targets, n_flags: int) -> np.ndarray:
    """Flag the ``n_flags`` samples with the highest CE under ``model``."""
    losses = per_sample_ce(forward(model, features), targets)
    flags = np.zeros(len(targets), dtype=bool)
    if n_flags > 0:
        # stable sort keeps ties deterministic
        flags[np.argsort(-losses, kind="stable")[:n_flags]] = True
    return flags


class GroupErrorMonitor:
    """Per-epoch training diagnostics for the trainers' ``monitor`` hook.

    Records the per-group training error of the biased model (or of the
    target model when there is no biased one) and, when given, the mean
    biased weight on aligned and conflicting samples.
    """

    def __init__(self, train: LabeledDataset):
        self.train = train
        self.keys = train.group_keys()
        self.groups = [g.key for g in all_groups(train.n_classes, train.n_biases)]
        self.akeys = train.alignment_keys()
        self.patterns = alignment_patterns(train.n_biases)
        self.conflicting = train.conflicting_mask()

    def __call__(self, epoch, models, weights):
        model = models.get("biased", models.get("target"))
        wrong = predict(model, self.train.features) != self.train.targets
        errs = {}
        for g in self.groups:
            mask = self.keys == g
            errs[g] = float(wrong[mask].mean()) if mask.any() else float("nan")
        aerrs = {p: _masked_mean(wrong, self.akeys == p) for p in self.patterns}
        out = {"group_error": errs, "alignment_error": aerrs}
        if weights is not None:
            w = np.asarray(weights)
            out["mean_weight_aligned"] = _masked_mean(w, ~self.conflicting)
            out["mean_weight_conflicting"] = _masked_mean(w, self.conflicting)
        return out


def _masked_mean(x, mask):
    return float(x[mask].mean()) if mask.any() else float("nan")


def error_curves(history) -> list[tuple[int, str, float]]:
    """(epoch, group, error_rate) rows from monitored history records."""
    if not history:
        raise ValueError("empty history")
    rows = []
    for rec in history:
        for g, e in rec.extra.get("group_error", {}).items():
            rows.append((rec.epoch, g, e))
    return rows


def alignment_error(history, pattern: str, epoch: int = -1) -> float:
    """Training error pooled over target classes for one alignment pattern."""
    return history[epoch].extra["alignment_error"][pattern]
