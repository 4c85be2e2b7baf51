"""Minimal dense/gated feed-forward engine with reverse-mode gradients.

Everything is float64 numpy. Layers operate on batches shaped
(batch, features); a bare vector is promoted and squeezed back. Each
layer caches its forward intermediates, so one layer instance belongs to
one training run at a time. Losses are means over the batch: the 1/B
factor enters through the upstream gradient, and backward() is the pure
chain rule.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _activate(name, a):
    if name == "identity":
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return _sigmoid(a)
    if name == "tanh":
        return np.tanh(a)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, a, out):
    # Derivative of the activation at pre-activation a (out = activation(a)).
    if name == "identity":
        return np.ones_like(a)
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "tanh":
        return 1.0 - out * out
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(n_out, n_in, rng):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def he_uniform(n_out, n_in, rng):
    limit = np.sqrt(6.0 / n_in)
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _promote(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError("inputs must be vectors or (batch, features) matrices")


class DenseLayer:
    """Affine map with an elementwise activation: activation(x W^T + b)."""

    kind = "dense"

    def __init__(self, n_in, n_out, activation="identity", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.activation = activation
        if rng is None:
            self.weights = np.zeros((n_out, n_in))
        elif activation == "relu":
            self.weights = he_uniform(n_out, n_in, rng)
        else:
            self.weights = glorot_uniform(n_out, n_in, rng)
        self.biases = np.zeros(n_out)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_biases = np.zeros_like(self.biases)
        self._x = None
        self._pre = None
        self._out = None
        self._was_vector = False

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def forward(self, x, training=False, rng=None):
        x, self._was_vector = _promote(x)
        if x.shape[1] != self.n_in:
            raise ValueError(
                f"dense layer expects {self.n_in} inputs, got {x.shape[1]}"
            )
        self._x = x
        self._pre = x @ self.weights.T + self.biases
        self._out = _activate(self.activation, self._pre)
        return self._out[0] if self._was_vector else self._out

    def backward(self, grad_out):
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 1:
            grad_out = grad_out[None, :]
        da = grad_out * _activation_grad(self.activation, self._pre, self._out)
        self.grad_weights += da.T @ self._x
        self.grad_biases += da.sum(axis=0)
        grad_in = da @ self.weights
        return grad_in[0] if self._was_vector else grad_in

    def params(self):
        return [self.weights, self.biases]

    def grads(self):
        return [self.grad_weights, self.grad_biases]


class GatedUnitLayer:
    """Static gated unit: sigmoid(W3 x) * tanh(sigmoid(W1 x) * tanh(W2 x)).

    With ``residual`` and matching widths the input is added back onto the
    gated output (identity skip).  Pre-residual outputs are bounded in
    (-1, 1) since both factors are products of a sigmoid and a tanh.
    """

    kind = "gated"

    def __init__(self, n_in, n_out, residual=False, rng=None):
        if residual and n_in != n_out:
            raise ValueError("residual gated unit needs matching in/out widths")
        self.residual = residual
        init = (lambda: glorot_uniform(n_out, n_in, rng)) if rng is not None else (
            lambda: np.zeros((n_out, n_in))
        )
        self.w1, self.w2, self.w3 = init(), init(), init()
        self.b1 = np.zeros(n_out)
        self.b2 = np.zeros(n_out)
        self.b3 = np.zeros(n_out)
        self.grad_w1 = np.zeros_like(self.w1)
        self.grad_w2 = np.zeros_like(self.w2)
        self.grad_w3 = np.zeros_like(self.w3)
        self.grad_b1 = np.zeros_like(self.b1)
        self.grad_b2 = np.zeros_like(self.b2)
        self.grad_b3 = np.zeros_like(self.b3)
        self._cache = None
        self._was_vector = False

    @property
    def n_in(self):
        return self.w1.shape[1]

    @property
    def n_out(self):
        return self.w1.shape[0]

    def forward(self, x, training=False, rng=None):
        x, self._was_vector = _promote(x)
        if x.shape[1] != self.n_in:
            raise ValueError(
                f"gated layer expects {self.n_in} inputs, got {x.shape[1]}"
            )
        gate_in = _sigmoid(x @ self.w1.T + self.b1)
        cand = np.tanh(x @ self.w2.T + self.b2)
        c = gate_in * cand
        gate_out = _sigmoid(x @ self.w3.T + self.b3)
        tc = np.tanh(c)
        out = gate_out * tc
        if self.residual:
            out = out + x
        self._cache = (x, gate_in, cand, gate_out, tc)
        return out[0] if self._was_vector else out

    def backward(self, grad_out):
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 1:
            grad_out = grad_out[None, :]
        x, gate_in, cand, gate_out, tc = self._cache
        d_gate_out = grad_out * tc
        d_tc = grad_out * gate_out
        d_c = d_tc * (1.0 - tc * tc)
        d_gate_in = d_c * cand
        d_cand = d_c * gate_in
        da3 = d_gate_out * gate_out * (1.0 - gate_out)
        da2 = d_cand * (1.0 - cand * cand)
        da1 = d_gate_in * gate_in * (1.0 - gate_in)
        self.grad_w1 += da1.T @ x
        self.grad_w2 += da2.T @ x
        self.grad_w3 += da3.T @ x
        self.grad_b1 += da1.sum(axis=0)
        self.grad_b2 += da2.sum(axis=0)
        self.grad_b3 += da3.sum(axis=0)
        grad_in = da1 @ self.w1 + da2 @ self.w2 + da3 @ self.w3
        if self.residual:
            grad_in = grad_in + grad_out
        return grad_in[0] if self._was_vector else grad_in

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def grads(self):
        return [
            self.grad_w1,
            self.grad_b1,
            self.grad_w2,
            self.grad_b2,
            self.grad_w3,
            self.grad_b3,
        ]


class DropoutLayer:
    """Inverted dropout: active only in training, identity at inference."""

    kind = "dropout"

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def params(self):
        return []

    def grads(self):
        return []


class Stack:
    """A plain sequential container."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]


def zero_grads(grads):
    for g in grads:
        g[...] = 0.0


class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in self.params]
        self.second_moment = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoint serialization (bit-exact round trip)
# ---------------------------------------------------------------------------


def _encode_array(arr) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(spec) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(spec["shape"])


def layer_to_spec(layer) -> dict:
    if layer.kind == "dense":
        return {
            "kind": "dense",
            "activation": layer.activation,
            "weights": _encode_array(layer.weights),
            "biases": _encode_array(layer.biases),
        }
    if layer.kind == "gated":
        return {
            "kind": "gated",
            "residual": layer.residual,
            "w1": _encode_array(layer.w1),
            "b1": _encode_array(layer.b1),
            "w2": _encode_array(layer.w2),
            "b2": _encode_array(layer.b2),
            "w3": _encode_array(layer.w3),
            "b3": _encode_array(layer.b3),
        }
    if layer.kind == "dropout":
        return {"kind": "dropout", "rate": layer.rate}
    raise ValueError(f"cannot serialize layer kind {layer.kind!r}")


def layer_from_spec(spec) -> DenseLayer | GatedUnitLayer | DropoutLayer:
    kind = spec["kind"]
    if kind == "dense":
        w = _decode_array(spec["weights"])
        layer = DenseLayer(w.shape[1], w.shape[0], activation=spec["activation"])
        layer.weights = w
        layer.biases = _decode_array(spec["biases"])
        layer.grad_weights = np.zeros_like(layer.weights)
        layer.grad_biases = np.zeros_like(layer.biases)
        return layer
    if kind == "gated":
        w1 = _decode_array(spec["w1"])
        layer = GatedUnitLayer(w1.shape[1], w1.shape[0], residual=spec["residual"])
        layer.w1 = w1
        layer.b1 = _decode_array(spec["b1"])
        layer.w2 = _decode_array(spec["w2"])
        layer.b2 = _decode_array(spec["b2"])
        layer.w3 = _decode_array(spec["w3"])
        layer.b3 = _decode_array(spec["b3"])
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            setattr(layer, f"grad_{name}", np.zeros_like(getattr(layer, name)))
        return layer
    if kind == "dropout":
        return DropoutLayer(spec["rate"])
    raise ValueError(f"unknown layer kind {kind!r}")


def save_stacks(path: str | Path, meta: dict, stacks: dict) -> None:
    """Write named layer stacks plus model metadata as structured JSON."""
    doc = {
        "format": "psrul-checkpoint",
        "version": 1,
        "meta": meta,
        "stacks": {
            name: [layer_to_spec(layer) for layer in stack.layers]
            for name, stack in stacks.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_stacks(path: str | Path) -> tuple[dict, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "psrul-checkpoint":
        raise ValueError(f"{path}: not a model checkpoint")
    stacks = {
        name: Stack([layer_from_spec(spec) for spec in specs])
        for name, specs in doc["stacks"].items()
    }
    return doc["meta"], stacks
