"""One-hidden-layer tanh network trained with MSE against +-1 labels.

Serves as the classical comparison model and as the gradient source for
transfer (black-box) attacks.  Its output lives in (-1, 1) like the quantum
readout, so the same attack code and accuracy rule apply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .model import sign_accuracy


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class MLPConfig:
    hidden: int = 32
    lr: float = 0.05
    epochs: int = 50
    batch: int = 32

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 0 or self.batch < 1 or self.lr < 0:
            raise ValueError("hidden/batch must be positive, epochs and lr non-negative")


@dataclass
class MLPParams:
    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float = 0.0
    version: int = 0

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "MLPParams":
        w1 = rng.normal(0.0, 1.0 / math.sqrt(d), size=(hidden, d))
        w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden)
        return cls(w1, np.zeros(hidden), w2, 0.0)

    @classmethod
    def zeros(cls, d: int, hidden: int) -> "MLPParams":
        return cls(np.zeros((hidden, d)), np.zeros(hidden), np.zeros(hidden), 0.0)

    def apply(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        self.w1 = self.w1 - lr * grads["w1"]
        self.b1 = self.b1 - lr * grads["b1"]
        self.w2 = self.w2 - lr * grads["w2"]
        self.b2 = float(self.b2 - lr * grads["b2"])
        self.version += 1


@dataclass
class Cache:
    x: np.ndarray
    hidden: np.ndarray
    out: np.ndarray
    version: int
    owner: int


def mlp_forward(params: MLPParams, x: np.ndarray):
    """Prediction ``tanh(w2 . tanh(W1 x + b1) + b2)`` and the backward cache."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    if X.shape[1] != params.w1.shape[1]:
        raise ValueError(f"expected {params.w1.shape[1]} inputs, got {X.shape[1]}")
    h = np.tanh(X @ params.w1.T + params.b1)
    out = np.tanh(h @ params.w2 + params.b2)
    cache = Cache(X, h, out, params.version, id(params))
    return (out if x.ndim == 2 else float(out[0])), cache


def mlp_backward(params: MLPParams, cache: Cache, y) -> Dict[str, np.ndarray]:
    """Gradients of the batch-mean ``(y - yhat)^2``.

    The ``x`` entry is the per-sample input gradient of that sample's own loss
    (not divided by the batch size), which is what attacks need.
    """
    if cache.owner != id(params) or cache.version != params.version:
        raise StaleCacheError("cache was produced by different or since-updated parameters")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    n = cache.x.shape[0]
    d_out = -2.0 * (y - cache.out) * (1.0 - cache.out**2)  # per-sample d loss / d pre-activation
    d_hidden = np.outer(d_out, params.w2) * (1.0 - cache.hidden**2)
    return {
        "w2": cache.hidden.T @ d_out / n,
        "b2": np.array(d_out.sum() / n),
        "w1": d_hidden.T @ cache.x / n,
        "b1": d_hidden.sum(axis=0) / n,
        "x": d_hidden @ params.w1,
    }


def mlp_train(x_train, y_train, cfg: MLPConfig, rng: np.random.Generator, x_test=None, y_test=None):
    """Mini-batch SGD; returns a trained `MLP` with accuracies and loss curve recorded."""
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if len(y_train) == 0:
        raise ValueError("empty training set")
    params = MLPParams.init(x_train.shape[1], cfg.hidden, rng)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(y_train))
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            _, cache = mlp_forward(params, x_train[idx])
            params.apply(mlp_backward(params, cache, y_train[idx]), cfg.lr)
        pred, _ = mlp_forward(params, x_train)
        losses.append(float(np.mean((y_train - pred) ** 2)))
    model = MLP(params, trained=True, losses=losses)
    model.train_accuracy = model.accuracy(x_train, y_train)
    if x_test is not None:
        model.test_accuracy = model.accuracy(x_test, y_test)
    return model


@dataclass
class MLP:
    params: MLPParams
    trained: bool = False
    losses: list = field(default_factory=list)
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None

    def predict(self, X) -> np.ndarray:
        out, _ = mlp_forward(self.params, np.atleast_2d(X))
        return out

    def accuracy(self, X, y) -> float:
        return sign_accuracy(self.predict(X), np.asarray(y))

    def input_gradient(self, X, y) -> np.ndarray:
        _, cache = mlp_forward(self.params, np.atleast_2d(X))
        return mlp_backward(self.params, cache, y)["x"]
