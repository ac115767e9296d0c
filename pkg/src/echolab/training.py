"""Trainers: vanilla ERM, echo-chamber biased model, Echoes, LfF, JTT, GroupDRO.

Unsupervised trainers take a :class:`~echolab.data.TrainView`, which has no
bias labels. Only :func:`train_groupdro` receives the full labeled dataset.

Every trainer accepts an optional ``monitor`` callable invoked after each
epoch as ``monitor(epoch, models, biased_weights)``, where ``models`` maps
``"biased"``/``"target"`` to the live models. Whatever dict it returns is
stored on that epoch's record. This is how evaluation code observes per-group
training error without the trainer ever holding group information.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .data import LabeledDataset, TrainView
from .nn import (
    Learner,
    MlpModel,
    adam_init,
    forward,
    gce_loss,
    init_mlp,
    log_softmax,
    predict,
    weighted_cross_entropy,
)
from .weighting import (
    DEFAULT_CAP,
    WeightVector,
    class_errors,
    debiased_weights,
    echo_update,
)

log = logging.getLogger(__name__)

METHODS = ("vanilla", "echoes", "lff", "jtt", "groupdro")


@dataclass
class TrainConfig:
    method: str = "echoes"
    epochs: int = 100
    batch_size: int = 256
    lr: float = 3e-4
    alpha: float = 0.5
    lam: float = 1000.0
    t_error: float = 0.5
    q: float = 0.7
    jtt_first_stage_epochs: int = 2
    jtt_upweight: float = 20.0
    groupdro_step: float = 0.01
    hidden_dims: list[int] = field(default_factory=lambda: [256])
    weight_cap: float = DEFAULT_CAP
    class_balance: bool = True
    seed: int = 0

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.t_error <= 1.0:
            raise ValueError(f"t_error must lie in (0, 1], got {self.t_error}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.method == "jtt" and not 0 <= self.jtt_first_stage_epochs < self.epochs:
            raise ValueError("jtt_first_stage_epochs must be smaller than epochs")
        if self.jtt_upweight <= 0:
            raise ValueError("jtt_upweight must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss_biased: float | None = None
    loss_debiased: float | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    target_model: MlpModel
    biased_model: MlpModel | None = None
    final_biased_weights: WeightVector | None = None
    history: list[EpochRecord] = field(default_factory=list)
    pseudo_flags: np.ndarray | None = None
    group_weights: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)


def _dims(n_in: int, n_classes: int, config: TrainConfig) -> list[int]:
    return [n_in, *config.hidden_dims, n_classes]


def _learner(view, config: TrainConfig, seed: int) -> Learner:
    model = init_mlp(_dims(view.features.shape[1], view.n_classes, config), seed=seed)
    return Learner(model, adam_init(model, lr=config.lr))


def _shuffle_rng(seed: int):
    return np.random.default_rng([seed, 1])


def batch_order(n: int, batch_size: int, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_view(view):
    if len(view) == 0:
        raise ValueError("empty training set")


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def _weighted_step(learner: Learner, x, y, w) -> float:
    logits, cache = forward(learner.model, x, return_cache=True)
    out = weighted_cross_entropy(logits, y, w)
    learner.step(x, out.logit_grad, cache)
    return out.total


def _fit_weighted(view, learner: Learner, weights: np.ndarray, epochs: int,
                  batch_size: int, rng, history, monitor, epoch_offset=0, role="target"):
    """Plain weighted-CE mini-batch training of a single model."""
    x_all, y_all = view.features, view.targets
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in batch_order(len(y_all), batch_size, rng):
            w = weights[idx]
            if w.sum() <= 0:
                continue
            losses.append(_weighted_step(learner, x_all[idx], y_all[idx], w))
        rec = EpochRecord(epoch + epoch_offset)
        if role == "biased":
            rec.loss_biased = _mean(losses)
        else:
            rec.loss_debiased = _mean(losses)
        if monitor is not None:
            rec.extra = monitor(rec.epoch, {role: learner.model}, None) or {}
        history.append(rec)


def train_vanilla(view: TrainView, config: TrainConfig, monitor=None) -> TrainResult:
    """ERM: unweighted CE, ``config.epochs`` epochs of mini-batch Adam."""
    _check_view(view)
    learner = _learner(view, config, config.seed)
    history: list[EpochRecord] = []
    _fit_weighted(view, learner, np.ones(len(view)), config.epochs, config.batch_size,
                  _shuffle_rng(config.seed), history, monitor)
    return TrainResult(target_model=learner.model, history=history)


def _echo_round(model: MlpModel, view, wb: WeightVector, config: TrainConfig) -> WeightVector:
    report = class_errors(predict(model, view.features), view.targets, view.n_classes)
    return echo_update(wb, report, view.targets, config.alpha, config.t_error)


def train_biased_echo(view: TrainView, config: TrainConfig, monitor=None) -> TrainResult:
    """Biased model alone: weighted CE, then echo re-weighting after each epoch."""
    _check_view(view)
    learner = _learner(view, config, config.seed)
    rng = _shuffle_rng(config.seed)
    x_all, y_all = view.features, view.targets
    wb = WeightVector.ones(len(view))
    history = []
    for epoch in range(1, config.epochs + 1):
        losses = [
            _weighted_step(learner, x_all[idx], y_all[idx], wb.weights[idx])
            for idx in batch_order(len(view), config.batch_size, rng)
        ]
        wb = _echo_round(learner.model, view, wb, config)
        rec = EpochRecord(epoch, loss_biased=_mean(losses))
        if monitor is not None:
            rec.extra = monitor(epoch, {"biased": learner.model}, wb.weights) or {}
        history.append(rec)
    return TrainResult(
        target_model=learner.model,
        biased_model=learner.model,
        final_biased_weights=wb,
        history=history,
    )


def train_echoes(view: TrainView, config: TrainConfig, monitor=None) -> TrainResult:
    """Joint training of the echo-chamber biased model and the target model.

    Batch loss is W_B-weighted CE of the biased model plus ``lam`` times
    W_D-weighted CE of the target model; each model only gets the gradient of
    its own term. W_D is zero during the first epoch and afterwards refreshed
    from W_B (invert, cap, class-balance) at the end of every epoch.
    """
    _check_view(view)
    f = _learner(view, config, config.seed)
    g = _learner(view, config, config.seed + 1)
    rng = _shuffle_rng(config.seed)
    x_all, y_all = view.features, view.targets
    n = len(view)
    wb = WeightVector.ones(n)
    wd = np.zeros(n)
    history = []
    for epoch in range(1, config.epochs + 1):
        lb, ld = [], []
        for idx in batch_order(n, config.batch_size, rng):
            x, y = x_all[idx], y_all[idx]
            lb.append(_weighted_step(f, x, y, wb.weights[idx]))
            w = wd[idx]
            if w.sum() > 0:
                logits, cache = forward(g.model, x, return_cache=True)
                out = weighted_cross_entropy(logits, y, w)
                ld.append(out.total)
                if config.lam > 0:
                    g.step(x, config.lam * out.logit_grad, cache)
        wb = _echo_round(f.model, view, wb, config)
        wd = debiased_weights(
            wb, y_all, cap=config.weight_cap, n_classes=view.n_classes,
            balance=config.class_balance,
        ).weights
        rec = EpochRecord(epoch, loss_biased=_mean(lb),
                          loss_debiased=config.lam * _mean(ld) if ld else None)
        if monitor is not None:
            rec.extra = monitor(epoch, {"biased": f.model, "target": g.model}, wb.weights) or {}
        history.append(rec)
    return TrainResult(
        target_model=g.model,
        biased_model=f.model,
        final_biased_weights=wb,
        history=history,
    )


def _lff_weights(ce_b: np.ndarray, ce_d: np.ndarray) -> np.ndarray:
    denom = ce_b + ce_d
    # both losses exactly zero only under saturated softmax; treat as a tie
    return np.divide(ce_b, denom, out=np.full_like(denom, 0.5), where=denom > 0)


def train_lff(view: TrainView, config: TrainConfig, monitor=None) -> TrainResult:
    """GCE biased model plus a target model weighted by relative CE difficulty."""
    _check_view(view)
    if not 0.0 < config.q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {config.q}")
    f = _learner(view, config, config.seed)
    g = _learner(view, config, config.seed + 1)
    rng = _shuffle_rng(config.seed)
    x_all, y_all = view.features, view.targets
    history = []
    for epoch in range(1, config.epochs + 1):
        lb, ld = [], []
        for idx in batch_order(len(view), config.batch_size, rng):
            x, y = x_all[idx], y_all[idx]
            rows = np.arange(len(y))
            logits_b, cache_b = forward(f.model, x, return_cache=True)
            logits_d, cache_d = forward(g.model, x, return_cache=True)
            ce_b = -log_softmax(logits_b)[rows, y]
            ce_d = -log_softmax(logits_d)[rows, y]
            w = _lff_weights(ce_b, ce_d)
            out_b = gce_loss(logits_b, y, config.q)
            f.step(x, out_b.logit_grad, cache_b)
            lb.append(out_b.total)
            if w.sum() > 0:
                out_d = weighted_cross_entropy(logits_d, y, w)
                g.step(x, out_d.logit_grad, cache_d)
                ld.append(out_d.total)
        rec = EpochRecord(epoch, loss_biased=_mean(lb), loss_debiased=_mean(ld))
        if monitor is not None:
            rec.extra = monitor(epoch, {"biased": f.model, "target": g.model}, None) or {}
        history.append(rec)
    flags = predict(f.model, x_all) != y_all
    return TrainResult(target_model=g.model, biased_model=f.model, history=history,
                       pseudo_flags=flags)


def train_jtt(view: TrainView, config: TrainConfig, monitor=None) -> TrainResult:
    """Two stages: short ERM run, then a fresh model with the error set upweighted.

    Stage 2 uses ``seed + 1`` for both its initialization and its batch order,
    so with ``jtt_upweight == 1`` it is exactly ``train_vanilla`` at that seed.
    """
    _check_view(view)
    s = config.jtt_first_stage_epochs
    if not 0 <= s < config.epochs:
        raise ValueError("jtt_first_stage_epochs must be smaller than epochs")
    history: list[EpochRecord] = []
    first = _learner(view, config, config.seed)
    _fit_weighted(view, first, np.ones(len(view)), s, config.batch_size,
                  _shuffle_rng(config.seed), history, monitor, role="biased")
    errors = predict(first.model, view.features) != view.targets
    warnings = []
    if not errors.any():
        msg = "JTT error set is empty; second stage reduces to vanilla training"
        log.warning(msg)
        warnings.append(msg)
    weights = np.where(errors, config.jtt_upweight, 1.0)
    second = _learner(view, config, config.seed + 1)
    _fit_weighted(view, second, weights, config.epochs - s, config.batch_size,
                  _shuffle_rng(config.seed + 1), history, monitor, epoch_offset=s)
    return TrainResult(target_model=second.model, biased_model=first.model,
                       history=history, pseudo_flags=errors, warnings=warnings)


def group_indices(dataset: LabeledDataset) -> tuple[np.ndarray, int]:
    """Joint-group index per sample, ordered like :func:`echolab.data.all_groups`."""
    al = dataset.alignment()
    k = al.shape[1]
    pattern = np.zeros(len(dataset), dtype=np.int64)
    for j in range(k):
        pattern = pattern * 2 + (~al[:, j]).astype(np.int64)
    return dataset.targets * (2 ** k) + pattern, dataset.n_classes * 2 ** k


def train_groupdro(dataset: LabeledDataset, config: TrainConfig, monitor=None) -> TrainResult:
    """Supervised reference: exponentiated-gradient weights over joint groups."""
    if not isinstance(dataset, LabeledDataset) or dataset.bias_labels is None:
        raise ValueError("GroupDRO needs a dataset with bias labels")
    view = dataset.view()
    _check_view(view)
    gidx, n_groups = group_indices(dataset)
    qw = np.full(n_groups, 1.0 / n_groups)
    learner = _learner(view, config, config.seed)
    rng = _shuffle_rng(config.seed)
    x_all, y_all = view.features, view.targets
    history = []
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in batch_order(len(view), config.batch_size, rng):
            x, y, gb = x_all[idx], y_all[idx], gidx[idx]
            logits, cache = forward(learner.model, x, return_cache=True)
            rows = np.arange(len(y))
            ce = -log_softmax(logits)[rows, y]
            counts = np.bincount(gb, minlength=n_groups)
            present = counts > 0
            gloss = np.zeros(n_groups)
            gloss[present] = np.bincount(gb, weights=ce, minlength=n_groups)[present] / counts[present]
            qw[present] *= np.exp(config.groupdro_step * gloss[present])
            qw /= qw.sum()
            w = qw[gb] / counts[gb]
            out = weighted_cross_entropy(logits, y, w)
            learner.step(x, out.logit_grad, cache)
            losses.append(float(qw[present] @ gloss[present] / qw[present].sum()))
        rec = EpochRecord(epoch, loss_debiased=_mean(losses))
        if monitor is not None:
            rec.extra = monitor(epoch, {"target": learner.model}, None) or {}
        history.append(rec)
    return TrainResult(target_model=learner.model, history=history, group_weights=qw.copy())


def train(dataset: LabeledDataset, config: TrainConfig, monitor=None) -> TrainResult:
    """Dispatch on ``config.method``; only GroupDRO sees the bias labels."""
    config.validate()
    if config.method == "groupdro":
        return train_groupdro(dataset, config, monitor)
    fn = {
        "vanilla": train_vanilla,
        "echoes": train_echoes,
        "lff": train_lff,
        "jtt": train_jtt,
    }[config.method]
    return fn(dataset.view(), config, monitor)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
