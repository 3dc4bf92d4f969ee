"""Gradient-sign attacks under an l-infinity budget in [0, 1] pixel units.

Models are duck-typed: anything with ``predict(X) -> (B,)`` and
``input_gradient(X, y) -> (B, d)`` (gradient of ``(y - yhat)^2``) can be
attacked.  `QuantumModel` gets its input gradients from the parameter-shift
rule and `MLP` from backpropagation.  All attacks are batched over rows and
deterministic (no random start).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import sign_accuracy

L1_FLOOR = 1e-12


class Method(enum.Enum):
    FGSM = "FGSM"
    PGD = "PGD"
    BIM = "BIM"
    MIM = "MIM"


@dataclass(frozen=True)
class AttackConfig:
    method: Method
    epsilon: float
    steps: int = 10
    step_size: Optional[float] = None
    mu: float = 1.0

    def __post_init__(self):
        if not isinstance(self.method, Method):
            object.__setattr__(self, "method", Method(str(self.method).upper()))
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @property
    def alpha(self) -> float:
        """Per-step size, defaulting per method (PGD 2*eps/steps, BIM and MIM eps/steps)."""
        if self.step_size is not None:
            return self.step_size
        if self.method is Method.PGD:
            return 2 * self.epsilon / self.steps
        return self.epsilon / self.steps


@dataclass
class AttackResult:
    adversarial: np.ndarray
    linf: np.ndarray
    robust_accuracy: float
    clean_accuracy: float

    @property
    def mean_linf(self) -> float:
        return float(np.mean(self.linf)) if len(self.linf) else 0.0


def _sign(g):
    return np.where(g >= 0, 1.0, -1.0)


def _as_batch(x, y):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    Y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} samples but {Y.shape[0]} labels")
    return X, Y, single


def fgsm(x, y, model, epsilon: float) -> np.ndarray:
    X, Y, single = _as_batch(x, y)
    if epsilon == 0:
        out = X.copy()
    else:
        out = np.clip(X + epsilon * _sign(model.input_gradient(X, Y)), 0.0, 1.0)
    return out[0] if single else out


def _iterate(X, Y, model, epsilon, step, steps, mu=None):
    lower = np.maximum(X - epsilon, 0.0)
    upper = np.minimum(X + epsilon, 1.0)
    adv = X.copy()
    momentum = np.zeros_like(X)
    for _ in range(steps):
        g = model.input_gradient(adv, Y)
        if mu is not None:
            l1 = np.sum(np.abs(g), axis=1, keepdims=True)
            g = np.where(l1 < L1_FLOOR, g, g / np.where(l1 < L1_FLOOR, 1.0, l1))
            momentum = mu * momentum + g
            g = momentum
        adv = np.clip(adv + step * _sign(g), lower, upper)
    return adv


def pgd(x, y, model, cfg: AttackConfig) -> np.ndarray:
    """Projected sign ascent from ``x`` itself, clipped to the eps-ball and [0, 1]."""
    X, Y, single = _as_batch(x, y)
    out = _iterate(X, Y, model, cfg.epsilon, cfg.alpha, cfg.steps)
    return out[0] if single else out


def bim(x, y, model, cfg: AttackConfig) -> np.ndarray:
    X, Y, single = _as_batch(x, y)
    step = cfg.step_size if cfg.step_size is not None else cfg.epsilon / cfg.steps
    out = _iterate(X, Y, model, cfg.epsilon, step, cfg.steps)
    return out[0] if single else out


def mim(x, y, model, cfg: AttackConfig) -> np.ndarray:
    """Momentum accumulation of L1-normalised gradients, sign step, projection."""
    X, Y, single = _as_batch(x, y)
    step = cfg.step_size if cfg.step_size is not None else cfg.epsilon / cfg.steps
    out = _iterate(X, Y, model, cfg.epsilon, step, cfg.steps, mu=cfg.mu)
    return out[0] if single else out


def run_attack(X, y, model, cfg: AttackConfig) -> np.ndarray:
    if cfg.method is Method.FGSM:
        return fgsm(X, y, model, cfg.epsilon)
    if cfg.epsilon == 0:
        return np.array(X, dtype=np.float64, copy=True)
    return {Method.PGD: pgd, Method.BIM: bim, Method.MIM: mim}[cfg.method](X, y, model, cfg)


def attack(X, y, model, cfg: AttackConfig, source=None) -> AttackResult:
    """Craft examples on ``source`` (defaults to ``model``) and score ``model``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    adv = run_attack(X, y, source if source is not None else model, cfg)
    linf = np.max(np.abs(adv - X), axis=1) if X.size else np.zeros(0)
    return AttackResult(
        adversarial=adv,
        linf=linf,
        robust_accuracy=sign_accuracy(model.predict(adv), y),
        clean_accuracy=sign_accuracy(model.predict(X), y),
    )


def robust_accuracy(X, y, model, cfg: AttackConfig) -> float:
    return attack(X, y, model, cfg).robust_accuracy


def blackbox_transfer(X, y, surrogate, target, cfg: AttackConfig) -> AttackResult:
    """Transfer attack: examples crafted on ``surrogate``, evaluated on ``target``."""
    if not getattr(surrogate, "trained", False):
        raise ValueError("surrogate model has not been trained")
    return attack(X, y, target, cfg, source=surrogate)
