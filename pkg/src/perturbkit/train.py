"""Minimal full-batch gradient-descent trainer for desk-scale experiments.

Deliberately boring: deterministic init from a seed, plain GD, no
schedules. Classification trains cross-entropy on logits; regression
trains the squared error. Enough to grow the small fixtures the attack
experiments need.
"""

from dataclasses import dataclass

import numpy as np

from perturbkit._codes import ACTIVATION_CODES
from perturbkit.errors import DivergenceError, ModelFormatError
from perturbkit.model import Activation, Dataset, Dense, Model

_HIDDEN_ACTS = ("relu", "tanh", "sigmoid", "identity")


@dataclass(frozen=True)
class NetSpec:
    """Layer sizes (input first, output last) plus activation tags."""

    sizes: tuple[int, ...]
    activation: str = "relu"
    out_activation: str | None = None

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ModelFormatError("NetSpec needs at least input and output sizes")
        if any(s < 1 for s in self.sizes):
            raise ModelFormatError("layer sizes must be positive")
        if self.activation not in _HIDDEN_ACTS:
            raise ModelFormatError(
                f"hidden activation must be one of {_HIDDEN_ACTS}"
            )
        if self.out_activation is not None and self.out_activation not in ACTIVATION_CODES:
            raise ModelFormatError(f"unknown output activation {self.out_activation!r}")


@dataclass
class TrainResult:
    model: Model
    losses: list[float]  # loss before each update
    final_loss: float
    accuracy: float | None = None


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    if tag == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    return z


def _act_deriv(tag: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return (z > 0).astype(np.float64)
    if tag == "tanh":
        return 1.0 - a * a
    if tag == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _init_params(spec: NetSpec, seed: int):
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _model_from_params(spec: NetSpec, weights, biases) -> Model:
    layers: list = []
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        layers.append(Dense(w, b))
        if i < last:
            layers.append(Activation(spec.activation))
        elif spec.out_activation is not None:
            layers.append(Activation(spec.out_activation))
    return Model(layers, spec.sizes[0], spec.sizes[-1])


def _forward_batch(spec: NetSpec, weights, biases, x):
    """Returns (output, per-layer (z, a) cache). x is (B, M)."""
    cache = []
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        tag = spec.activation if i < last else (spec.out_activation or "identity")
        a_next = _act(tag, z)
        cache.append((a, z, a_next, tag))
        a = a_next
    return a, cache


def _loss_and_output_grad(spec: NetSpec, out, labels, targets):
    b = out.shape[0]
    if labels is not None:
        shifted = out - out.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_z - shifted[np.arange(b), labels]))
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(b), labels] -= 1.0
        return loss, probs / b
    d = out - targets
    loss = float(np.mean(np.sum(d * d, axis=1)))
    return loss, 2.0 * d / b


def train_toy(
    spec: NetSpec, dataset: Dataset, epochs: int, lr: float, seed: int
) -> TrainResult:
    """Full-batch gradient descent; deterministic given the seed.

    Labeled datasets train cross-entropy on logits (out_activation must
    stay None); target datasets train the squared error. Raises
    DivergenceError with the epoch index if the loss goes non-finite.
    """
    if len(dataset) == 0:
        raise ModelFormatError("cannot train on an empty dataset")
    if dataset.input_dim != spec.sizes[0]:
        raise ModelFormatError(
            f"dataset dimension {dataset.input_dim} != spec input {spec.sizes[0]}"
        )
    labels = targets = None
    if dataset.has_labels:
        if spec.out_activation is not None:
            raise ModelFormatError("classification trains on logits; drop out_activation")
        labels = np.array([ex.label for ex in dataset], dtype=np.intp)
        if labels.max() >= spec.sizes[-1]:
            raise ModelFormatError(
                f"label {labels.max()} outside the {spec.sizes[-1]} output classes"
            )
    elif dataset.has_targets:
        targets = np.stack([ex.target for ex in dataset])
        if targets.shape[1] != spec.sizes[-1]:
            raise ModelFormatError(
                f"target dimension {targets.shape[1]} != spec output {spec.sizes[-1]}"
            )
    else:
        raise ModelFormatError("dataset needs labels (classification) or targets")

    x = np.stack([ex.x for ex in dataset])
    weights, biases = _init_params(spec, seed)
    losses = []
    with np.errstate(over="ignore", invalid="ignore"):  # divergence handled below
        for epoch in range(epochs):
            out, cache = _forward_batch(spec, weights, biases, x)
            loss, g_out = _loss_and_output_grad(spec, out, labels, targets)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            losses.append(loss)
            g = g_out
            for i in range(len(weights) - 1, -1, -1):
                a_in, z, a_out, tag = cache[i]
                g = g * _act_deriv(tag, z, a_out)
                gw = g.T @ a_in
                gb = g.sum(axis=0)
                g = g @ weights[i]
                weights[i] = weights[i] - lr * gw
                biases[i] = biases[i] - lr * gb

        out, _ = _forward_batch(spec, weights, biases, x)
        final_loss, _ = _loss_and_output_grad(spec, out, labels, targets)
    if not np.isfinite(final_loss):
        raise DivergenceError(epochs)
    accuracy = None
    if labels is not None:
        accuracy = float(np.mean(np.argmax(out, axis=1) == labels))
    return TrainResult(
        model=_model_from_params(spec, weights, biases),
        losses=losses,
        final_loss=final_loss,
        accuracy=accuracy,
    )
