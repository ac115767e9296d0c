import math

import numpy as np
import pytest

from echolab.data import (
    CsvFormatError,
    GroupId,
    LabeledDataset,
    SyntheticSpec,
    generate,
    group_of,
    load_csv,
    save_csv,
    subsample,
)
from echolab.nn import adam_init, adam_step, backward, forward, init_mlp, predict, weighted_cross_entropy


def test_default_train_group_counts(default_data):
    train, _ = default_data
    assert len(train) == 8000
    keys = train.alignment_keys()
    n = 8000
    for pattern, p in {"AA": 0.95**2, "AC": 0.95 * 0.05, "CA": 0.05 * 0.95, "CC": 0.05**2}.items():
        count = int(np.sum(keys == pattern))
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(count - n * p) <= 4 * sigma, (pattern, count)


def test_empirical_skew_per_bias(default_data):
    train, _ = default_data
    al = train.alignment()
    for k in range(2):
        sigma = math.sqrt(8000 * 0.95 * 0.05)
        assert abs(al[:, k].sum() - 0.95 * 8000) <= 4 * sigma


def test_balanced_test_set(default_data):
    _, test = default_data
    assert len(test) == 1000
    keys, counts = np.unique(test.group_keys(), return_counts=True)
    assert len(keys) == 8
    assert set(counts) == {125}


def test_full_skew_has_no_conflicting():
    train, _ = generate(SyntheticSpec(n_train=2000, skew=[1.0, 1.0], seed=1))
    assert not train.conflicting_mask().any()


def test_three_classes():
    spec = SyntheticSpec(n_train=900, n_test=3 * 4 * 10, n_classes=3, seed=2)
    train, test = generate(spec)
    assert set(np.unique(train.targets)) == {0, 1, 2}
    assert set(np.unique(test.group_keys(), return_counts=True)[1]) == {10}


@pytest.mark.parametrize("kw", [
    {"n_test": 1001},
    {"skew": [0.5, 0.9]},
    {"skew": [0.9]},
    {"bias_sep": [0.5, 3.0]},
    {"noise_sigma": 0.0},
])
def test_rejects_inconsistent_spec(kw):
    with pytest.raises(ValueError):
        generate(SyntheticSpec(**kw))


def test_generation_is_deterministic():
    a = generate(SyntheticSpec(n_train=300, n_test=200, seed=4))
    b = generate(SyntheticSpec(n_train=300, n_test=200, seed=4))
    for x, y in zip(a, b):
        assert x.equals(y)


def test_group_of():
    ds = LabeledDataset(
        np.zeros((4, 1)), np.array([1, 1, 0, 0]),
        np.array([[1, 1], [0, 0], [0, 1], [1, 1]]), 2,
    )
    assert group_of(0, ds) == GroupId(1, "AA")
    assert group_of(1, ds) == GroupId(1, "CC")
    assert group_of(2, ds) == GroupId(0, "AC")
    assert group_of(3, ds).alignment == "CC"


def test_trainer_view_hides_bias_labels(small_data):
    view = small_data[0].view()
    assert not hasattr(view, "bias_labels")
    assert view.features is small_data[0].features


def test_subsample(default_data):
    train, _ = default_data
    assert subsample(train, 1.0, seed=0).equals(train)
    half = subsample(train, 0.5, seed=3)
    assert len(half) == 4000
    again = subsample(train, 0.5, seed=3)
    assert half.equals(again)
    with pytest.raises(ValueError):
        subsample(train, 0.0)


def test_csv_round_trip(tmp_path, small_data):
    for ds in small_data:
        path = tmp_path / f"{ds.role}.csv"
        save_csv(ds, path)
        back = load_csv(path, role=ds.role)
        assert back.equals(ds)
        assert back.features.tobytes() == ds.features.tobytes()


def test_csv_wrong_column_count(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,f1,y,b0\n0.1,0.2,1,1\n0.3,0.4,0\n")
    with pytest.raises(CsvFormatError) as exc:
        load_csv(path)
    assert exc.value.line == 3


def test_csv_hand_authored(tmp_path):
    path = tmp_path / "four.csv"
    path.write_text(
        "f0,f1,y,b0,b1\n"
        "1.5,-0.5,1,1,1\n"
        "-2,0.25,0,0,1\n"
        "0,0,1,0,0\n"
        "3e-1,7,0,0,0\n"
    )
    ds = load_csv(path)
    assert len(ds) == 4
    np.testing.assert_array_equal(ds.targets, [1, 0, 1, 0])
    assert ds.features[3, 0] == 0.3
    assert list(ds.group_keys()) == ["y1:AA", "y0:AC", "y1:CC", "y0:AA"]


def _one_epoch_probe_accuracy(x, y, seed=0):
    # zero init so that only what was learned in this epoch shows up
    m = init_mlp([x.shape[1], 2], seed=seed)
    m.weights[0][...] = 0.0
    opt = adam_init(m, lr=3e-4)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(y))
    for i in range(0, len(y), 256):
        idx = perm[i:i + 256]
        out = weighted_cross_entropy(forward(m, x[idx]), y[idx])
        adam_step(opt, m, backward(m, x[idx], out.logit_grad))
    return float(np.mean(predict(m, x) == y))


def test_bias_block_is_easier_than_target_block(default_data):
    train, _ = default_data
    spec = SyntheticSpec()
    d = spec.block_dim
    target_block = train.features[:, :d]
    for k in range(spec.n_biases):
        bias_block = train.features[:, d * (k + 1):d * (k + 2)]
        assert (_one_epoch_probe_accuracy(bias_block, train.targets)
                > _one_epoch_probe_accuracy(target_block, train.targets))
