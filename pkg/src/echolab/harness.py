"""Experiment driver: dataset generation, training runs, sweeps, evaluation.

Experiment config (JSON)::

    {
      "dataset": {"n_train": 8000, ...}            # SyntheticSpec fields, or
      "dataset": {"train_csv": "...", "test_csv": "..."},
      "methods": ["vanilla", "lff", "jtt", "echoes"],
      "train": {"epochs": 100, "alpha": 0.5, ...},  # TrainConfig fields
      "seed": 0,
      "repeats": 3,
      "output_dir": "results",
      "sweep": {"param": "alpha", "values": [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]}
    }

Every field is optional. Repeat ``r`` trains with seed ``seed + r`` on the
same data. Outputs carry the config hash and seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import LabeledDataset, SyntheticSpec, generate, load_csv, save_csv, subsample
from .metrics import (
    GroupErrorMonitor,
    flag_quality,
    group_accuracy,
    pseudo_label_quality,
)
from .nn import model_from_dict, model_to_dict
from .training import METHODS, TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

DEFAULT_METHODS = ["vanilla", "lff", "jtt", "echoes"]
DEFAULT_GRIDS = {
    "alpha": [0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
    "fraction": [1.0, 0.5, 0.2, 0.1],
}
PSEUDO_THRESHOLD = 0.5


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=dict)
    methods: list[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    train: dict = field(default_factory=dict)
    seed: int = 0
    repeats: int = 3
    output_dir: str = "results"
    sweep: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "methods": list(self.methods),
            "train": self.train,
            "seed": self.seed,
            "repeats": self.repeats,
            "output_dir": self.output_dir,
            "sweep": self.sweep,
        }

    def result_dict(self) -> dict:
        """Config without output_dir, which does not influence results."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def config_hash(self) -> str:
        d = self.result_dict()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def validate(self):
        if not self.methods:
            raise UsageError("no methods given")
        for m in self.methods:
            if m not in METHODS:
                raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if self.repeats < 1:
            raise UsageError("repeats must be >= 1")
        self.train_config(self.methods[0], self.seed).validate()

    def train_config(self, method: str, seed: int) -> TrainConfig:
        try:
            cfg = TrainConfig.from_dict({**self.train, "method": method, "seed": seed})
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        return cfg

    def synthetic_spec(self) -> SyntheticSpec | None:
        if "train_csv" in self.dataset or "test_csv" in self.dataset:
            return None
        return SyntheticSpec.from_dict(self.dataset)


def load_datasets(exp: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    spec = exp.synthetic_spec()
    if spec is not None:
        return generate(spec)
    try:
        train_path, test_path = exp.dataset["train_csv"], exp.dataset["test_csv"]
    except KeyError:
        raise UsageError("dataset needs both train_csv and test_csv") from None
    tr = load_csv(train_path, role="train")
    te = load_csv(test_path, role="test", n_classes=tr.n_classes)
    return tr, te


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def _json_safe(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return _json_safe(v.item())
    return v


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(spec: SyntheticSpec, out_dir) -> dict:
    """Write train.csv, test.csv and manifest.json for ``spec``."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr, te = generate(spec)
    save_csv(tr, out / "train.csv")
    save_csv(te, out / "test.csv")
    blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    manifest = {
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:12],
        "files": {"train": "train.csv", "test": "test.csv"},
        "rows": {"train": len(tr), "test": len(te)},
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def pseudo_f1(method: str, result: TrainResult, train_data: LabeledDataset):
    if method == "echoes" and result.final_biased_weights is not None:
        return pseudo_label_quality(result.final_biased_weights, train_data, PSEUDO_THRESHOLD).f1
    if result.pseudo_flags is not None:
        return flag_quality(result.pseudo_flags, train_data).f1
    return None


def run_metrics(method, seed, result: TrainResult, train_data, test_data, config_hash) -> dict:
    gm = group_accuracy(result.target_model, test_data)
    probe = result.biased_model or result.target_model
    row = {
        "method": method,
        "seed": seed,
        "config_hash": config_hash,
        "avg_group_acc": gm.avg_group_acc,
        "worst_group_acc": gm.worst_group_acc,
    }
    for k, g in enumerate(gm.bias_gaps()):
        row[f"gap_bias{k}"] = g
    row["avg_bias_gap"] = gm.avg_bias_gap()
    row["pseudo_f1"] = pseudo_f1(method, result, train_data)
    row["biased_aligned_acc"] = group_accuracy(probe, test_data).per_alignment_acc[
        "A" * test_data.n_biases
    ]
    row["per_group_acc"] = gm.per_group_acc
    return row


HISTORY_HEADER = [
    "epoch", "split", "group", "error_rate", "mean_weight_aligned",
    "mean_weight_conflicting", "loss_biased", "loss_debiased", "config_hash", "seed",
]


def history_rows(result: TrainResult, config_hash: str, seed: int):
    for rec in result.history:
        ex = rec.extra
        for g, e in ex.get("group_error", {}).items():
            yield [
                rec.epoch, "train", g, e, ex.get("mean_weight_aligned"),
                ex.get("mean_weight_conflicting"), rec.loss_biased, rec.loss_debiased,
                config_hash, seed,
            ]


def _metric_columns(rows) -> list[str]:
    cols = ["method", "seed", "avg_group_acc", "worst_group_acc"]
    gaps = sorted({k for r in rows for k in r if k.startswith("gap_bias")})
    return cols + gaps + ["avg_bias_gap", "pseudo_f1", "biased_aligned_acc", "config_hash"]


def summarize(rows, key="method") -> list[dict]:
    """Mean and sample std per ``key`` over repeats."""
    cols = [c for c in _metric_columns(rows) if c not in ("method", "seed", "config_hash")]
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    out = []
    for k, rs in groups.items():
        s = {key: k, "n_runs": len(rs)}
        for c in cols:
            vals = [r[c] for r in rs if r.get(c) is not None]
            if not vals:
                s[f"{c}_mean"] = s[f"{c}_std"] = None
                continue
            s[f"{c}_mean"] = float(np.mean(vals))
            s[f"{c}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out.append(s)
    return out


def _run_one(method, seed, exp, train_data, test_data, chash, run_dir=None):
    cfg = exp.train_config(method, seed)
    result = train(train_data, cfg, GroupErrorMonitor(train_data))
    row = run_metrics(method, seed, result, train_data, test_data, chash)
    if run_dir is not None:
        stem = f"{method}_seed{seed}"
        _write_csv(run_dir / f"{stem}_history.csv", HISTORY_HEADER,
                   history_rows(result, chash, seed))
        _write_json(run_dir / f"{stem}_metrics.json", row)
        _write_json(run_dir / f"{stem}_model.json", {
            "config_hash": chash, "seed": seed, "method": method,
            "train_config": cfg.to_dict(), "model": model_to_dict(result.target_model),
        })
    return row, result


def cmd_train(exp: ExperimentConfig) -> list[dict]:
    """Train every (method, repeat); write per-run files, metrics table and summary."""
    exp.validate()
    out = Path(exp.output_dir)
    run_dir = out / "runs"
    run_dir.mkdir(parents=True, exist_ok=True)
    chash = exp.config_hash()
    train_data, test_data = load_datasets(exp)
    rows = []
    for method in exp.methods:
        for r in range(exp.repeats):
            seed = exp.seed + r
            log.info("training %s seed=%d", method, seed)
            row, _ = _run_one(method, seed, exp, train_data, test_data, chash, run_dir)
            rows.append(row)
    cols = _metric_columns(rows)
    _write_csv(out / "metrics.csv", cols, ([r.get(c) for c in cols] for r in rows))
    summary = summarize(rows)
    for s in summary:
        s["config_hash"] = chash
    _write_json(out / "metrics.json", {"config_hash": chash, "config": exp.result_dict(),
                                       "runs": rows, "summary": summary})
    scols = list(summary[0])
    _write_csv(out / "summary.csv", scols, ([s[c] for c in scols] for s in summary))
    return rows


def sweep_values(exp: ExperimentConfig) -> tuple[str, list]:
    sw = exp.sweep or {}
    param = sw.get("param")
    if not param:
        raise UsageError("sweep needs a parameter name")
    values = sw.get("values", DEFAULT_GRIDS.get(param))
    if not values:
        raise UsageError(f"empty sweep grid for {param!r}")
    if param != "fraction" and param not in TrainConfig.__dataclass_fields__:
        raise UsageError(f"cannot sweep over {param!r}")
    return param, list(values)


def cmd_sweep(exp: ExperimentConfig) -> list[dict]:
    """Run the grid; ``fraction`` subsamples the training set, other names set TrainConfig fields."""
    param, values = sweep_values(exp)
    exp.validate()
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = exp.config_hash()
    train_full, test_data = load_datasets(exp)
    data_seed = exp.dataset.get("seed", 0)
    rows = []
    for value in values:
        if param == "fraction":
            train_data, sub = subsample(train_full, value, seed=data_seed), exp
        else:
            train_data = train_full
            sub = replace(exp, train={**exp.train, param: value})
        for method in exp.methods:
            for r in range(exp.repeats):
                seed = exp.seed + r
                log.info("sweep %s=%s %s seed=%d", param, value, method, seed)
                row, _ = _run_one(method, seed, sub, train_data, test_data, chash)
                row = {"param": param, "value": value, **row}
                rows.append(row)
    cols = ["param", "value"] + _metric_columns(rows)
    _write_csv(out / "sweep.csv", cols, ([r.get(c) for c in cols] for r in rows))
    summary = []
    for value in values:
        for s in summarize([r for r in rows if r["value"] == value]):
            summary.append({"param": param, "value": value, **s, "config_hash": chash})
    scols = list(summary[0])
    _write_csv(out / "sweep_summary.csv", scols, ([s[c] for c in scols] for s in summary))
    _write_json(out / "sweep.json", {"config_hash": chash, "config": exp.result_dict(),
                                     "runs": rows, "summary": summary})
    return rows


def cmd_evaluate(model_path, test_csv) -> dict:
    with open(model_path) as fh:
        blob = json.load(fh)
    model = model_from_dict(blob["model"])
    test_data = load_csv(test_csv, role="test", n_classes=model.n_classes)
    gm = group_accuracy(model, test_data)
    out = {
        "model": str(model_path),
        "config_hash": blob.get("config_hash"),
        "seed": blob.get("seed"),
        "avg_group_acc": gm.avg_group_acc,
        "worst_group_acc": gm.worst_group_acc,
        "avg_bias_gap": gm.avg_bias_gap(),
        "per_group_acc": gm.per_group_acc,
        "per_alignment_acc": gm.per_alignment_acc,
    }
    for k, g in enumerate(gm.bias_gaps()):
        out[f"gap_bias{k}"] = g
    return out


def format_summary(summary) -> str:
    """Plain-text table: avg/worst group acc, per-bias gaps and avg gap in percent."""
    if not summary:
        return ""
    gap_keys = sorted(k[:-5] for k in summary[0] if k.startswith("gap_bias") and k.endswith("_mean"))
    cols = ["avg_group_acc", "worst_group_acc", *gap_keys, "avg_bias_gap"]
    lines = ["method     " + "".join(f"{c:>18s}" for c in cols)]
    for s in summary:
        cells = []
        for c in cols:
            m, sd = s.get(f"{c}_mean"), s.get(f"{c}_std")
            cells.append(f"{100 * m:11.1f} ±{100 * sd:4.1f}" if m is not None else f"{'-':>18s}")
        label = s.get("method", "")
        lines.append(f"{label:<11s}" + "".join(f"{c:>18s}" for c in cells))
    return "\n".join(lines)
