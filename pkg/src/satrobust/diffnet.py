"""Small MLP classifier with hand-written reverse-mode gradients.

Logits (pre-softmax outputs) are the representation that the Sinkhorn term
aligns, so ``backward`` accepts an extra upstream gradient on the logits in
addition to the cross-entropy term.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFailure

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[1]:
            raise InvalidInputError(
                f"layer shapes do not match: weight {self.weight.shape}, "
                f"bias {self.bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")


@dataclass
class Classifier:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("classifier needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise InvalidInputError("consecutive layer shapes do not compose")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[1]

    def copy(self) -> "Classifier":
        return Classifier([Layer(l.weight.copy(), l.bias.copy(), l.activation)
                           for l in self.layers])

    def parameters(self):
        for layer in self.layers:
            yield layer.weight
            yield layer.bias

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "layers": [
                {
                    "rows": int(l.weight.shape[0]),
                    "cols": int(l.weight.shape[1]),
                    "weights": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                    "activation": l.activation,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Classifier":
        layers = []
        for spec in doc["layers"]:
            w = np.asarray(spec["weights"], dtype=np.float64)
            layers.append(Layer(w.reshape(spec["rows"], spec["cols"]),
                                spec["bias"], spec["activation"]))
        model = cls(layers)
        if model.input_dim != doc["input_dim"] or model.num_classes != doc["num_classes"]:
            raise InvalidInputError("checkpoint header disagrees with its layers")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Classifier":
        return cls.from_dict(json.loads(Path(path).read_text()))


def mlp(input_dim: int, hidden: Sequence[int], num_classes: int,
        seed: int = 0) -> Classifier:
    """He-initialized ReLU MLP with an identity output layer."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, num_classes]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        w = rng.normal(scale=np.sqrt(2.0 / d_in), size=(d_in, d_out))
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(Layer(w, np.zeros(d_out), act))
    return Classifier(layers)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.clip(np.atleast_2d(np.asarray(self.inputs, dtype=np.float64)), 0.0, 1.0)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.inputs.shape[0] < 1:
            raise InvalidInputError("empty batch")
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise InvalidInputError("inputs and labels differ in length")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class GradientTape:
    weights: list
    biases: list
    inputs: Optional[np.ndarray] = None

    def __add__(self, other: "GradientTape") -> "GradientTape":
        inputs = None
        if self.inputs is not None and other.inputs is not None:
            inputs = np.concatenate([self.inputs, other.inputs])
        return GradientTape([a + b for a, b in zip(self.weights, other.weights)],
                            [a + b for a, b in zip(self.biases, other.biases)],
                            inputs)

    @classmethod
    def zeros_like(cls, model: Classifier) -> "GradientTape":
        return cls([np.zeros_like(l.weight) for l in model.layers],
                   [np.zeros_like(l.bias) for l in model.layers])


def _forward_cached(model: Classifier, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise InvalidInputError(
            f"expected inputs of width {model.input_dim}, got shape {x.shape}")
    acts = [x]
    pre = []
    h = x
    for layer in model.layers:
        z = h @ layer.weight + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(h)
    return acts, pre


def forward(model: Classifier, inputs) -> np.ndarray:
    """Logits for a batch (a ``Batch`` or a raw ``(B, d)`` array)."""
    x = inputs.inputs if isinstance(inputs, Batch) else np.atleast_2d(inputs)
    return _forward_cached(model, x)[0][-1]


def predict(model: Classifier, inputs) -> np.ndarray:
    return np.argmax(forward(model, inputs), axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise InvalidInputError("label outside [0, num_classes)")
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(labels)), labels].mean())


def cross_entropy_grad(logits, labels, reduction: str = "mean") -> np.ndarray:
    """d CE / d logits; ``reduction='sum'`` drops the 1/B factor."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    p = np.exp(log_softmax(logits))
    p[np.arange(len(labels)), labels] -= 1.0
    if reduction == "mean":
        p /= len(labels)
    return p


def backprop(model: Classifier, inputs: np.ndarray,
             logit_grad: np.ndarray) -> GradientTape:
    """Pull an upstream gradient on the logits back to parameters and inputs."""
    acts, pre = _forward_cached(model, np.atleast_2d(inputs))
    logit_grad = np.atleast_2d(logit_grad)
    if logit_grad.shape != acts[-1].shape:
        raise InvalidInputError(
            f"logit gradient shape {logit_grad.shape} != logits {acts[-1].shape}")
    gw, gb = [], []
    delta = logit_grad
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if layer.activation == "relu":
            delta = delta * (pre[i] > 0)
        gw.append(acts[i].T @ delta)
        gb.append(delta.sum(axis=0))
        delta = delta @ layer.weight.T
    return GradientTape(gw[::-1], gb[::-1], delta)


@dataclass
class LossSpec:
    """Cross-entropy (scaled by ``ce_weight``) plus an optional external
    gradient on the logits, e.g. from the Sinkhorn term."""

    ce_weight: float = 1.0
    logit_grad: Optional[np.ndarray] = field(default=None, repr=False)


def backward(model: Classifier, batch: Batch,
             loss_spec: Optional[LossSpec] = None) -> GradientTape:
    loss_spec = loss_spec or LossSpec()
    logits = forward(model, batch)
    upstream = loss_spec.ce_weight * cross_entropy_grad(logits, batch.labels)
    if loss_spec.logit_grad is not None:
        extra = np.asarray(loss_spec.logit_grad, dtype=np.float64)
        if extra.shape != logits.shape:
            raise InvalidInputError(
                f"external logit gradient has shape {extra.shape}, "
                f"logits have {logits.shape}")
        upstream = upstream + extra
    return backprop(model, batch.inputs, upstream)


def sgd_step(model: Classifier, tape: GradientTape, lr: float,
             weight_decay: float = 0.0) -> Classifier:
    """Return a new model with ``p <- p - lr * (grad + weight_decay * p)``."""
    if lr <= 0:
        raise InvalidInputError("lr must be positive")
    if weight_decay < 0:
        raise InvalidInputError("weight_decay must be nonnegative")
    layers = []
    for i, (layer, gw, gb) in enumerate(zip(model.layers, tape.weights, tape.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericalFailure(f"non-finite gradient in layer {i}")
        w = layer.weight - lr * (gw + weight_decay * layer.weight)
        b = layer.bias - lr * (gb + weight_decay * layer.bias)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericalFailure(f"non-finite parameters in layer {i}")
        layers.append(Layer(w, b, layer.activation))
    return Classifier(layers)
