"""Hand-built datasets shared by the metric and acceptance tests."""
import numpy as np

from echolab.data import LabeledDataset, alignment_patterns
from echolab.nn import backward, forward, gce_loss, weighted_cross_entropy


def grouped_dataset(correct_counts, n_per_group=125, n_classes=2, k=2):
    """Dataset with ``n_per_group`` rows per joint group plus predictions.

    ``correct_counts`` maps ``"y{c}:{pattern}"`` to how many rows of that
    group are predicted correctly; the rest get the next class.
    """
    ys, bs, preds = [], [], []
    for c in range(n_classes):
        for pat in alignment_patterns(k):
            bias = [c if ch == "A" else (c + 1) % n_classes for ch in pat]
            n_ok = correct_counts.get(f"y{c}:{pat}", n_per_group)
            for i in range(n_per_group):
                ys.append(c)
                bs.append(bias)
                preds.append(c if i < n_ok else (c + 1) % n_classes)
    n = len(ys)
    ds = LabeledDataset(np.zeros((n, 1)), np.array(ys), np.array(bs), n_classes, role="test")
    return ds, np.array(preds)


def naive_group_accuracy(pred, ds):
    """Per-sample loop oracle: (per_group, per_alignment, avg, worst)."""
    hits, tot, ahits, atot = {}, {}, {}, {}
    for i in range(len(ds)):
        y = int(ds.targets[i])
        pat = ""
        for b in ds.bias_labels[i]:
            pat += "A" if int(b) == y else "C"
        g = "y%d:%s" % (y, pat)
        ok = 1 if int(pred[i]) == y else 0
        hits[g] = hits.get(g, 0) + ok
        tot[g] = tot.get(g, 0) + 1
        ahits[pat] = ahits.get(pat, 0) + ok
        atot[pat] = atot.get(pat, 0) + 1
    per_group = {g: hits[g] / tot[g] for g in tot}
    per_align = {p: ahits[p] / atot[p] for p in atot}
    vals = list(per_group.values())
    return per_group, per_align, sum(vals) / len(vals), min(vals)


def naive_gap(per_align, k, n_biases):
    """Direct loop over all patterns with bias ``k`` aligned."""
    diffs = []
    for pat in per_align:
        if pat[k] != "A":
            continue
        other = pat[:k] + "C" + pat[k + 1:]
        diffs.append(abs(per_align[pat] - per_align[other]))
    return sum(diffs) / len(diffs)


def random_fixture(rng, n=1000, n_classes=2, k=2):
    """Random labels/biases/predictions with every joint group present."""
    while True:
        y = rng.integers(n_classes, size=n)
        b = rng.integers(n_classes, size=(n, k))
        ds = LabeledDataset(rng.standard_normal((n, 1)), y, b, n_classes, role="test")
        if len(set(ds.group_keys())) == n_classes * 2 ** k:
            return ds, rng.integers(n_classes, size=n)


def numeric_grads(model, loss_fn, h=1e-5):
    """Central differences of loss_fn() w.r.t. every parameter entry."""
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss_fn()
            p[i] = old - h
            down = loss_fn()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradient_error(model, x, y, loss="ce", w=None, q=0.7):
    def total():
        logits = forward(model, x)
        if loss == "ce":
            return weighted_cross_entropy(logits, y, w).total
        return gce_loss(logits, y, q, w).total

    logits = forward(model, x)
    out = weighted_cross_entropy(logits, y, w) if loss == "ce" else gce_loss(logits, y, q, w)
    analytic = backward(model, x, out.logit_grad)
    return max_rel_error(analytic, numeric_grads(model, total))


# Lines printed by tests/test_acceptance.py, echoed again in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def report(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
