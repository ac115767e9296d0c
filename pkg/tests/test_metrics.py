import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echolab.data import LabeledDataset
from echolab.metrics import (
    GroupErrorMonitor,
    GroupMetrics,
    alignment_error,
    bias_gap,
    error_curves,
    flag_quality,
    group_accuracy_from_predictions,
    loss_rank_flags,
    pseudo_label_quality,
)
from echolab.nn import MlpModel
from echolab.training import TrainConfig, train
from echolab.weighting import WeightVector

from _fixtures import grouped_dataset, naive_gap, naive_group_accuracy, random_fixture


def test_perfect_classifier(default_data):
    _, te = default_data
    m = group_accuracy_from_predictions(te.targets, te)
    assert m.avg_group_acc == m.worst_group_acc == 1.0
    assert m.avg_bias_gap() == 0.0


def test_constant_classifier_on_balanced_test(default_data):
    _, te = default_data
    m = group_accuracy_from_predictions(np.zeros(len(te), dtype=int), te)
    assert m.avg_group_acc == 0.5
    assert m.worst_group_acc == 0.0


def test_hand_counted_groups():
    counts = {"y0:AA": 125, "y0:AC": 100, "y0:CA": 50, "y0:CC": 25,
              "y1:AA": 120, "y1:AC": 75, "y1:CA": 60, "y1:CC": 0}
    ds, pred = grouped_dataset(counts)
    m = group_accuracy_from_predictions(pred, ds)
    assert m.per_group_acc == {g: c / 125 for g, c in counts.items()}
    assert m.per_alignment_acc == {"AA": 245 / 250, "AC": 175 / 250, "CA": 110 / 250, "CC": 25 / 250}
    assert m.worst_group_acc == 0.0
    assert m.avg_group_acc == sum(counts.values()) / 1000


def test_gap_hand_example():
    m = GroupMetrics({}, {"AA": 0.9, "CA": 0.5, "AC": 0.8, "CC": 0.4}, 0.0, 0.0)
    assert abs(bias_gap(m, 0) - 0.4) <= 1e-15
    assert abs(bias_gap(m, 1) - 0.1) <= 1e-15
    assert m.avg_bias_gap() == pytest.approx(0.25, abs=1e-15)


def test_equal_accuracies_have_zero_gap():
    m = GroupMetrics({}, {"AA": 0.7, "CA": 0.7, "AC": 0.7, "CC": 0.7}, 0.7, 0.7)
    assert m.bias_gaps() == [0.0, 0.0]


@pytest.mark.parametrize("k", [-1, 2])
def test_gap_rejects_bad_index(k):
    m = GroupMetrics({}, {"AA": 1, "CA": 1, "AC": 1, "CC": 1}, 1, 1)
    with pytest.raises(ValueError):
        bias_gap(m, k)


def test_missing_group_is_an_error():
    ds = LabeledDataset(np.zeros((2, 1)), np.array([0, 1]), np.array([[0], [1]]), 2)
    with pytest.raises(ValueError):
        group_accuracy_from_predictions(np.array([0, 1]), ds)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 1), (2, 2), (3, 2), (2, 3)]))
def test_matches_brute_force(seed, shape):
    c, k = shape
    ds, pred = random_fixture(np.random.default_rng(seed), n=400, n_classes=c, k=k)
    m = group_accuracy_from_predictions(pred, ds)
    pg, pa, avg, worst = naive_group_accuracy(pred, ds)
    assert m.per_group_acc == pg
    assert m.per_alignment_acc == pa
    assert m.avg_group_acc == pytest.approx(avg, rel=1e-15)
    assert m.worst_group_acc == worst
    assert m.worst_group_acc <= min(m.per_alignment_acc.values())
    for j in range(k):
        assert bias_gap(m, j) == pytest.approx(naive_gap(pa, j, k), abs=1e-15)


def _pl_dataset():
    # rows 0,1 aligned; rows 2,3 conflicting
    y = np.array([0, 1, 0, 1])
    b = np.array([[0], [1], [1], [0]])
    return LabeledDataset(np.zeros((4, 1)), y, b, 2)


def test_pseudo_label_examples():
    ds = _pl_dataset()
    perfect = pseudo_label_quality(WeightVector(np.array([1.0, 1.0, 0.1, 0.2])), ds, 0.5)
    assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
    none = pseudo_label_quality(np.ones(4), ds, 0.5)
    assert none.n_flagged == 0 and none.f1 == 0.0
    half = pseudo_label_quality(np.array([0.1, 1.0, 0.1, 1.0]), ds, 0.5)
    assert (half.precision, half.recall, half.f1) == (0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        pseudo_label_quality(np.ones(4), ds, 0.0)


def test_flag_quality_all_flagged():
    r = flag_quality(np.ones(4, dtype=bool), _pl_dataset())
    assert r.precision == 0.5 and r.recall == 1.0
    assert r.f1 == pytest.approx(2 / 3)


def test_loss_rank_picks_highest_losses():
    # identity 2-class linear model: logits equal the inputs
    model = MlpModel([2, 2], [np.eye(2)], [np.zeros(2)])
    x = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 0.0], [0.0, 0.5]])
    y = np.array([0, 0, 0, 0])
    flags = loss_rank_flags(model, x, y, 2)
    assert flags.tolist() == [False, True, False, True]
    assert not loss_rank_flags(model, x, y, 0).any()


def test_error_curves_shape(small_data):
    tr, _ = small_data
    res = train(tr, TrainConfig(epochs=3, hidden_dims=[8], batch_size=64), GroupErrorMonitor(tr))
    rows = error_curves(res.history)
    assert len(rows) == 3 * 8
    assert [r[0] for r in rows[::8]] == [1, 2, 3]
    assert 0.0 <= alignment_error(res.history, "AA") <= 1.0
    with pytest.raises(ValueError):
        error_curves([])
