"""Minimal float64 MLP: ReLU hidden layers, softmax output, cross-entropy, SGD.

Parameters live in one flat vector so that aggregation and attack code can
treat a model as plain vector arithmetic. Layer ``l`` contributes its weight
matrix (``rows x cols`` = ``out x in``, row-major) followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DataError, ShapeError

__all__ = [
    "ModelParams",
    "TrainConfig",
    "init_model",
    "zeros_like",
    "forward",
    "predict",
    "loss_and_grad",
    "input_grad",
    "sgd_step",
    "epoch_batches",
    "sgd_epochs",
]


@dataclass(frozen=True)
class ModelParams:
    layer_shapes: tuple
    flat: np.ndarray

    def __post_init__(self):
        shapes = tuple((int(r), int(c)) for r, c in self.layer_shapes)
        object.__setattr__(self, "layer_shapes", shapes)
        flat = np.asarray(self.flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != param_count(shapes):
            raise ShapeError(
                f"flat vector has {flat.size} entries, layer shapes need {param_count(shapes)}"
            )
        object.__setattr__(self, "flat", flat)

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def input_dim(self) -> int:
        return self.layer_shapes[0][1]

    @property
    def num_classes(self) -> int:
        return self.layer_shapes[-1][0]

    def layers(self) -> list:
        """(W, b) views into ``flat`` for every layer."""
        out = []
        pos = 0
        for rows, cols in self.layer_shapes:
            W = self.flat[pos:pos + rows * cols].reshape(rows, cols)
            pos += rows * cols
            b = self.flat[pos:pos + rows]
            pos += rows
            out.append((W, b))
        return out

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return ModelParams(self.layer_shapes, flat)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.layer_shapes == other.layer_shapes and np.array_equal(self.flat, other.flat)

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    base_epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_epochs < 1:
            raise ConfigError("base_epochs must be >= 1")


def param_count(layer_shapes) -> int:
    return sum(r * c + r for r, c in layer_shapes)


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def unflatten(model: ModelParams) -> list:
    return [(W.copy(), b.copy()) for W, b in model.layers()]


def init_model(layer_dims, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ConfigError(f"layer_dims needs >= 2 positive entries, got {dims}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append((W, np.zeros(fan_out)))
    shapes = tuple((fo, fi) for fi, fo in zip(dims[:-1], dims[1:]))
    return ModelParams(shapes, flatten(layers))


def zeros_like(model: ModelParams) -> ModelParams:
    return model.with_flat(np.zeros_like(model.flat))


def _check_batch(model: ModelParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"batch shape {X.shape} does not match input dim {model.input_dim}")
    return X


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _forward_cache(model: ModelParams, X: np.ndarray):
    acts = [X]
    pre = []
    layers = model.layers()
    A = X
    for i, (W, b) in enumerate(layers):
        Z = A @ W.T + b
        pre.append(Z)
        A = np.maximum(Z, 0.0) if i < len(layers) - 1 else _softmax(Z)
        acts.append(A)
    return layers, pre, acts


def forward(model: ModelParams, X) -> np.ndarray:
    """Class-probability matrix for a feature batch."""
    X = _check_batch(model, X)
    return _forward_cache(model, X)[2][-1]


def predict(model: ModelParams, X) -> np.ndarray:
    return np.argmax(forward(model, X), axis=1)


def _check_labels(model: ModelParams, X: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ShapeError(f"labels shape {y.shape} does not match batch of {X.shape[0]}")
    if X.shape[0] == 0:
        raise DataError("empty batch")
    C = model.num_classes
    if y.size and (y.min() < 0 or y.max() >= C):
        raise DataError(f"labels must lie in [0, {C}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.intp)


def _backward(layers, pre, acts, y):
    """Returns (loss, per-layer grads, gradient w.r.t. the input batch)."""
    n = y.shape[0]
    P = acts[-1]
    rows = np.arange(n)
    loss = -np.mean(np.log(np.clip(P[rows, y], 1e-300, None)))
    dZ = P.copy()
    dZ[rows, y] -= 1.0
    dZ /= n
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (dZ.T @ acts[i], dZ.sum(axis=0))
        dA = dZ @ W
        if i > 0:
            dZ = dA * (pre[i - 1] > 0)
    return loss, grads, dA


def loss_and_grad(model: ModelParams, X, y):
    """Mean softmax cross-entropy and its exact gradient as a flat vector."""
    X = _check_batch(model, X)
    y = _check_labels(model, X, y)
    layers, pre, acts = _forward_cache(model, X)
    loss, grads, _ = _backward(layers, pre, acts, y)
    return float(loss), flatten(grads)


def input_grad(model: ModelParams, X, y):
    """Mean cross-entropy and its gradient with respect to the input batch."""
    X = _check_batch(model, X)
    y = _check_labels(model, X, y)
    layers, pre, acts = _forward_cache(model, X)
    loss, _, dX = _backward(layers, pre, acts, y)
    return float(loss), dX


def sgd_step(model: ModelParams, grad, lr: float) -> ModelParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.flat.shape:
        raise ShapeError(f"gradient length {grad.size} != parameter length {model.size}")
    return model.with_flat(model.flat - lr * grad)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffled index batches for one epoch; the last short batch is kept."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def sgd_epochs(
    model: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    epoch_data: Optional[Callable] = None,
    grad_transform: Optional[Callable] = None,
) -> ModelParams:
    """Plain mini-batch SGD.

    ``epoch_data(epoch, X, y) -> (X, y)`` may substitute the data seen in an
    epoch (same row count); ``grad_transform(grad) -> grad`` is applied to each
    batch gradient before the step.
    """
    n = X.shape[0]
    for epoch in range(epochs):
        batches = epoch_batches(n, batch_size, rng)
        Xe, ye = (X, y) if epoch_data is None else epoch_data(epoch, X, y)
        for idx in batches:
            _, g = loss_and_grad(model, Xe[idx], ye[idx])
            if grad_transform is not None:
                g = grad_transform(g)
            model = sgd_step(model, g, lr)
    return model
