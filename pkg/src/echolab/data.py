"""Synthetic multi-bias datasets, group bookkeeping and CSV persistence.

Each sample has a target label ``y`` and ``K`` bias attributes. Bias value
``y`` is the one correlated with class ``y``; any other value conflicts. The
feature vector concatenates a target block, one block per bias and a block of
pure noise. Bias blocks get a wider class-mean separation than the target
block, which is what makes them the easy, early-learned cue.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

ALIGNED = "A"
CONFLICTING = "C"


@dataclass
class SyntheticSpec:
    n_train: int = 8000
    n_test: int = 1000
    n_classes: int = 2
    n_biases: int = 2
    skew: list[float] = field(default_factory=lambda: [0.95, 0.95])
    target_sep: float = 1.0
    bias_sep: list[float] = field(default_factory=lambda: [3.0, 3.0])
    block_dim: int = 4
    noise_dim: int = 8
    noise_sigma: float = 1.0
    seed: int = 0

    @property
    def n_features(self) -> int:
        return (1 + self.n_biases) * self.block_dim + self.noise_dim

    def validate(self):
        c, k = self.n_classes, self.n_biases
        if c < 2:
            raise ValueError("need at least two classes")
        if k < 1:
            raise ValueError("need at least one bias attribute")
        if len(self.skew) != k or len(self.bias_sep) != k:
            raise ValueError(f"skew and bias_sep must both have {k} entries")
        for s in self.skew:
            if not 0.5 < s <= 1.0:
                raise ValueError(f"skew {s} outside (0.5, 1]")
        for sep in self.bias_sep:
            if not sep > self.target_sep:
                raise ValueError(
                    f"bias_sep {sep} must exceed target_sep {self.target_sep}"
                )
        if self.target_sep < 0:
            raise ValueError("target_sep must be non-negative")
        if self.block_dim < 1 or self.noise_dim < 0:
            raise ValueError("block_dim must be >= 1 and noise_dim >= 0")
        if c > 2 and self.block_dim < c:
            raise ValueError("block_dim must be >= n_classes when n_classes > 2")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")
        n_groups = c * 2 ** k
        if self.n_test % n_groups:
            raise ValueError(
                f"n_test={self.n_test} is not divisible by the {n_groups} "
                f"joint groups (n_classes * 2**n_biases)"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrainView:
    """What an unsupervised trainer is allowed to see."""

    features: np.ndarray
    targets: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    targets: np.ndarray
    bias_labels: np.ndarray | None
    n_classes: int
    role: str = "train"

    def __len__(self):
        return len(self.targets)

    @property
    def n_biases(self) -> int:
        return 0 if self.bias_labels is None else self.bias_labels.shape[1]

    def view(self) -> TrainView:
        return TrainView(self.features, self.targets, self.n_classes)

    def require_bias_labels(self) -> np.ndarray:
        if self.bias_labels is None:
            raise ValueError("dataset carries no bias labels")
        return self.bias_labels

    def alignment(self) -> np.ndarray:
        """Boolean N x K matrix, True where bias k is aligned with the target."""
        b = self.require_bias_labels()
        return b == self.targets[:, None]

    def conflicting_mask(self) -> np.ndarray:
        """True for samples conflicting on at least one bias."""
        return ~self.alignment().all(axis=1)

    def group_keys(self) -> np.ndarray:
        al = self.alignment()
        pats = np.array(["".join(ALIGNED if a else CONFLICTING for a in row) for row in al])
        return np.array([f"y{t}:{p}" for t, p in zip(self.targets, pats)])

    def alignment_keys(self) -> np.ndarray:
        al = self.alignment()
        return np.array(["".join(ALIGNED if a else CONFLICTING for a in row) for row in al])

    def equals(self, other: "LabeledDataset") -> bool:
        if self.n_classes != other.n_classes or len(self) != len(other):
            return False
        if (self.bias_labels is None) != (other.bias_labels is None):
            return False
        same_b = self.bias_labels is None or np.array_equal(self.bias_labels, other.bias_labels)
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.targets, other.targets)
            and same_b
        )


@dataclass(frozen=True)
class GroupId:
    target: int
    alignment: str

    @property
    def key(self) -> str:
        return f"y{self.target}:{self.alignment}"


def alignment_patterns(k: int) -> list[str]:
    """All 2**k patterns, all-aligned first: A..A, A..C, ..., C..C."""
    return ["".join(p) for p in itertools.product(ALIGNED + CONFLICTING, repeat=k)]


def all_groups(n_classes: int, k: int) -> list[GroupId]:
    return [GroupId(c, p) for c in range(n_classes) for p in alignment_patterns(k)]


def group_of(index: int, dataset: LabeledDataset) -> GroupId:
    b = dataset.require_bias_labels()[index]
    y = int(dataset.targets[index])
    pattern = "".join(ALIGNED if v == y else CONFLICTING for v in b)
    return GroupId(y, pattern)


def _class_directions(n_classes: int, dim: int) -> np.ndarray:
    # C=2: class 0 at -1, class 1 at +1 on every coordinate.
    if n_classes == 2:
        return np.stack([-np.ones(dim), np.ones(dim)])
    d = -np.ones((n_classes, dim))
    for c in range(n_classes):
        d[c, c::n_classes] = 1.0
    return d


def _conflicting_values(y: np.ndarray, n_classes: int, rng) -> np.ndarray:
    return (y + rng.integers(1, n_classes, size=len(y))) % n_classes


def _features(spec: SyntheticSpec, y, bias, rng) -> np.ndarray:
    dirs = _class_directions(spec.n_classes, spec.block_dim)
    n = len(y)
    blocks = [0.5 * spec.target_sep * dirs[y]]
    for k in range(spec.n_biases):
        blocks.append(0.5 * spec.bias_sep[k] * dirs[bias[:, k]])
    blocks.append(np.zeros((n, spec.noise_dim)))
    means = np.concatenate(blocks, axis=1)
    return means + spec.noise_sigma * rng.standard_normal(means.shape)


def _make_train(spec: SyntheticSpec, rng) -> LabeledDataset:
    n, c = spec.n_train, spec.n_classes
    y = rng.integers(c, size=n)
    bias = np.empty((n, spec.n_biases), dtype=np.int64)
    for k, s in enumerate(spec.skew):
        aligned = rng.random(n) < s
        bias[:, k] = np.where(aligned, y, _conflicting_values(y, c, rng))
    x = _features(spec, y, bias, rng)
    return LabeledDataset(x, y.astype(np.int64), bias, c, "train")


def _make_test(spec: SyntheticSpec, rng) -> LabeledDataset:
    c, k = spec.n_classes, spec.n_biases
    per_group = spec.n_test // (c * 2 ** k)
    ys, bs = [], []
    for g in all_groups(c, k):
        y = np.full(per_group, g.target, dtype=np.int64)
        b = np.empty((per_group, k), dtype=np.int64)
        for j, a in enumerate(g.alignment):
            b[:, j] = y if a == ALIGNED else _conflicting_values(y, c, rng)
        ys.append(y)
        bs.append(b)
    y = np.concatenate(ys)
    bias = np.concatenate(bs)
    order = rng.permutation(len(y))
    y, bias = y[order], bias[order]
    x = _features(spec, y, bias, rng)
    return LabeledDataset(x, y, bias, c, "test")


def generate(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    train = _make_train(spec, rng)
    test = _make_test(spec, rng)
    return train, test


def subsample(dataset: LabeledDataset, fraction: float, seed: int = 0) -> LabeledDataset:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(dataset)
    m = math.floor(fraction * n)
    if m < 1:
        raise ValueError(f"fraction {fraction} of {n} rows leaves no samples")
    idx = np.sort(np.random.default_rng(seed).choice(n, size=m, replace=False))
    return take(dataset, idx)


def take(dataset: LabeledDataset, idx) -> LabeledDataset:
    b = None if dataset.bias_labels is None else dataset.bias_labels[idx]
    return LabeledDataset(
        dataset.features[idx], dataset.targets[idx], b, dataset.n_classes, dataset.role
    )


class CsvFormatError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


def save_csv(dataset: LabeledDataset, path) -> None:
    d = dataset.features.shape[1]
    k = dataset.n_biases
    header = [f"f{j}" for j in range(d)] + ["y"] + [f"b{j}" for j in range(k)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(dataset)):
            cells = ["%.17g" % v for v in dataset.features[i]]
            cells.append(str(int(dataset.targets[i])))
            if k:
                cells.extend(str(int(v)) for v in dataset.bias_labels[i])
            fh.write(",".join(cells) + "\n")


def load_csv(path, role: str = "train", n_classes: int | None = None) -> LabeledDataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, "empty file") from None
        feat_cols = [j for j, h in enumerate(header) if h.startswith("f")]
        if "y" not in header or not feat_cols:
            raise CsvFormatError(path, 1, "header must name feature columns f0.. and y")
        y_col = header.index("y")
        bias_cols = [j for j, h in enumerate(header) if h.startswith("b")]
        expected = [f"f{j}" for j in range(len(feat_cols))] + ["y"] + [
            f"b{j}" for j in range(len(bias_cols))
        ]
        if header != expected:
            raise CsvFormatError(path, 1, f"unexpected header {header}")
        feats, ys, bs = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    path, line_no, f"expected {len(header)} columns, found {len(row)}"
                )
            try:
                feats.append([float(row[j]) for j in feat_cols])
                ys.append(int(row[y_col]))
                bs.append([int(row[j]) for j in bias_cols])
            except ValueError as exc:
                raise CsvFormatError(path, line_no, str(exc)) from None
    if not ys:
        raise CsvFormatError(path, 2, "no data rows")
    x = np.array(feats, dtype=np.float64)
    y = np.array(ys, dtype=np.int64)
    b = np.array(bs, dtype=np.int64) if bias_cols else None
    if n_classes is None:
        n_classes = int(max(y.max(), b.max() if b is not None else 0)) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"{path}: target labels outside [0, {n_classes})")
    return LabeledDataset(x, y, b, n_classes, role)
