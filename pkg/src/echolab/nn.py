"""Dense rectifier MLP with hand-written backprop, weighted losses and Adam.

Everything runs in float64. Models and optimizer states are small dataclasses
holding numpy arrays; ``adam_step`` updates them in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def num_params(self) -> int:
        return sum(p.size for p in self.params())


@dataclass
class LossOutput:
    total: float
    per_sample: np.ndarray
    logit_grad: np.ndarray


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


def model_to_dict(model: MlpModel) -> dict:
    return {
        "layer_dims": list(model.layer_dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(d: dict) -> MlpModel:
    dims = [int(v) for v in d["layer_dims"]]
    weights = [np.array(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(d["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    if len(weights) != len(dims) - 1 or any(b.shape != (n,) for b, n in zip(biases, dims[1:])):
        raise ValueError("model parameters do not match layer_dims")
    return MlpModel(dims, weights, biases)


def init_mlp(layer_dims, seed=None, rng=None) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    if rng is None:
        rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def _check_batch(model: MlpModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"batch shape {x.shape} does not match input dim {model.layer_dims[0]}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


def forward(model: MlpModel, batch, return_cache=False):
    """Logits of ``model`` on ``batch`` (rows are samples).

    With ``return_cache`` also returns the per-layer inputs needed by
    :func:`backward`.
    """
    h = _check_batch(model, batch)
    cache = [h]
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if k < last:
            h = np.maximum(z, 0.0)
            cache.append(h)
        else:
            h = z
    if return_cache:
        return h, cache
    return h


def predict(model: MlpModel, batch) -> np.ndarray:
    return np.argmax(forward(model, batch), axis=1)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(logits: np.ndarray, labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {logits.shape[0]} rows")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= logits.shape[1]):
        raise ValueError("label out of range")
    return y


def _normalized_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights shape {w.shape} does not match batch of {n}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0:
        raise ValueError("all-zero weights: weighted mean is undefined")
    return w / s


def per_sample_ce(logits, labels) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    y = _check_labels(logits, labels)
    return -log_softmax(logits)[np.arange(len(y)), y]


def weighted_cross_entropy(logits, labels, weights=None) -> LossOutput:
    """Cross entropy aggregated as sum(w * l) / sum(w).

    ``weights=None`` is the plain mean.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = _check_labels(logits, labels)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    wn = _normalized_weights(weights, n)
    logp = log_softmax(logits)
    rows = np.arange(n)
    per_sample = -logp[rows, y]
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad *= wn[:, None]
    return LossOutput(float(wn @ per_sample), per_sample, grad)


def gce_loss(logits, labels, q=0.7, weights=None) -> LossOutput:
    """Generalized cross entropy (1 - p_y**q) / q.

    d/dz of the per-sample loss is p_y**q * (softmax - onehot), i.e. the CE
    gradient scaled by p_y**q.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    logits = np.asarray(logits, dtype=np.float64)
    y = _check_labels(logits, labels)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    wn = _normalized_weights(weights, n)
    rows = np.arange(n)
    logp = log_softmax(logits)
    p = np.exp(logp)
    py_q = np.exp(q * logp[rows, y])
    per_sample = (1.0 - py_q) / q
    grad = p
    grad[rows, y] -= 1.0
    grad *= (wn * py_q)[:, None]
    return LossOutput(float(wn @ per_sample), per_sample, grad)


def backward(model: MlpModel, batch, logit_grad, cache=None) -> list[np.ndarray]:
    """Parameter gradients, ordered like ``model.params()``."""
    if cache is None:
        _, cache = forward(model, batch, return_cache=True)
    g = np.asarray(logit_grad, dtype=np.float64)
    if g.shape != (cache[0].shape[0], model.n_classes):
        raise ValueError(f"logit_grad shape {g.shape} does not match forward output")
    grads = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        h = cache[k]
        grads[2 * k] = h.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = (g @ model.weights[k].T) * (h > 0)
    return grads


def adam_init(model: MlpModel, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    params = model.params()
    return OptimizerState(
        [np.zeros_like(p) for p in params],
        [np.zeros_like(p) for p in params],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(state: OptimizerState, model: MlpModel, grads):
    """Bias-corrected Adam update, applied in place. Returns (model, state)."""
    params = model.params()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match model parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


@dataclass
class Learner:
    """A model bundled with its optimizer state."""

    model: MlpModel
    opt: OptimizerState = field(default=None)

    def __post_init__(self):
        if self.opt is None:
            self.opt = adam_init(self.model)

    def step(self, x, logit_grad, cache=None):
        grads = backward(self.model, x, logit_grad, cache=cache)
        adam_step(self.opt, self.model, grads)
