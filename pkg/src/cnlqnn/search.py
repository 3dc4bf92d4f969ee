"""Differentiable architecture search over the supernet.

Per epoch: sample ``n_arch`` architectures by Gumbel-max on the logits, train
the shared angles on each with SGD for ``n_iter`` CNL mini-batches, then take
one Adam step on the logits.  Gradients for the logits come from the
score-function estimator ``(L - b) * grad log p(k | alpha)`` over the sampled
architectures with an exponential-moving-average baseline ``b``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    Architecture,
    CNLConfig,
    ModelConfig,
    ParamStore,
    accuracy,
    loss_and_grad,
)
from .rng import stream

log = logging.getLogger(__name__)

BASELINE_DECAY = 0.9
SELECTIONS = ("argmax", "validation")


@dataclass(frozen=True)
class SearchConfig:
    lr_omega: float = 0.01
    lr_alpha: float = 0.01
    batch_size: int = 32
    n_arch: int = 3
    n_iter: Optional[int] = None  # None: ceil(n_train / (batch_size * n_arch))
    epochs: int = 5
    tau0: float = 5.0
    tau_decay: float = 0.95
    patience: int = 5
    final_epochs: int = 5
    val_fraction: float = 0.2
    # "argmax": per-layer argmax of alpha; "validation": best validation
    # accuracy among every architecture sampled or selected during the search
    selection: str = "argmax"

    def __post_init__(self):
        if self.lr_omega < 0 or self.lr_alpha < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1 or self.n_arch < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, n_arch, epochs and patience must be positive")
        if self.n_iter is not None and self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if self.tau0 <= 0 or not 0 < self.tau_decay < 1:
            raise ValueError("need tau0 > 0 and tau_decay in (0, 1)")
        if self.final_epochs < 0 or not 0 <= self.val_fraction < 1:
            raise ValueError("need final_epochs >= 0 and val_fraction in [0, 1)")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")

    def iterations(self, n_train: int) -> int:
        if self.n_iter is not None:
            return self.n_iter
        return max(1, math.ceil(n_train / (self.batch_size * self.n_arch)))


@dataclass(frozen=True)
class GumbelDraw:
    soft: np.ndarray  # (p, |G|), rows on the simplex
    hard: Architecture


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, alpha: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(alpha), np.zeros_like(alpha))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    tau: float
    mean_loss: float
    val_accuracy: float
    candidate: Architecture = ()
    sampled: Tuple[Architecture, ...] = ()


@dataclass
class SearchResult:
    arch: Architecture
    store: ParamStore
    alpha: np.ndarray
    history: List[EpochRecord]
    val_accuracy: float
    final_losses: List[float] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def gumbel_softmax_sample(alpha: np.ndarray, tau: float, rng: np.random.Generator,
                          gumbel: Optional[np.ndarray] = None) -> GumbelDraw:
    """Relaxed per-layer sample and its hard (Gumbel-max) architecture.

    ``gumbel`` overrides the Gumbel(0, 1) noise; tests use it to pin ``g``.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if gumbel is None:
        u = rng.uniform(size=alpha.shape)
        # uniform() may return exactly 0
        u = np.where(u == 0.0, np.finfo(np.float64).tiny, u)
        gumbel = -np.log(-np.log(u))
    perturbed = log_softmax(alpha, axis=1) + gumbel
    soft = softmax(perturbed / tau, axis=1)
    hard = tuple(int(i) for i in np.argmax(perturbed, axis=1))
    return GumbelDraw(soft, hard)


def temperature(epoch: int, cfg: SearchConfig) -> float:
    return cfg.tau0 * cfg.tau_decay**epoch


def sgd_step(store: ParamStore, grads: np.ndarray, lr: float) -> ParamStore:
    grads = np.asarray(grads)
    if grads.shape != store.omega.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {store.omega.shape}")
    return ParamStore(store.omega - lr * grads)


def adam_step(state: AdamState, alpha: np.ndarray, grad: np.ndarray, lr: float):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != alpha.shape or state.m.shape != alpha.shape:
        raise ValueError(f"shape mismatch: alpha {alpha.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_alpha = alpha - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.beta1, state.beta2, state.eps), new_alpha


def log_prob_grad(hard: Sequence[int], alpha: np.ndarray) -> np.ndarray:
    """d log p(hard | alpha) / d alpha: one-hot(choice) minus softmax, per layer."""
    g = -softmax(np.asarray(alpha, dtype=np.float64), axis=1)
    g[np.arange(len(hard)), list(hard)] += 1.0
    return g


def arch_grad_estimate(draws: Sequence[Tuple[GumbelDraw, float]], alpha: np.ndarray,
                       baseline: float) -> np.ndarray:
    if not draws:
        raise ValueError("architecture gradient needs at least one draw")
    alpha = np.asarray(alpha, dtype=np.float64)
    probs = softmax(alpha, axis=1)
    hard = np.array([d.hard for d, _ in draws])  # (M, p)
    adv = np.array([loss for _, loss in draws], dtype=np.float64) - baseline
    p, k = alpha.shape
    counts = np.zeros((p, k))
    for layer in range(p):
        counts[layer] = np.bincount(hard[:, layer], weights=adv, minlength=k)
    return (counts - adv.sum() * probs) / len(draws)


def ema_baseline(baseline: Optional[float], loss: float, decay: float = BASELINE_DECAY) -> float:
    if baseline is None:
        return loss
    return decay * baseline + (1 - decay) * loss


def argmax_architecture(alpha: np.ndarray) -> Architecture:
    return tuple(int(i) for i in np.argmax(alpha, axis=1))


class _BatchSampler:
    """Walks a fresh permutation of the training rows, reshuffling when exhausted."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        self.n, self.batch, self.rng = n, min(batch, n), rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.batch]
        self.pos += self.batch
        return idx


def holdout(x: np.ndarray, y: np.ndarray, fraction: float, rng: np.random.Generator):
    """Split ``(x, y)`` into train and validation parts."""
    if fraction <= 0:
        return x, y, x, y
    order = rng.permutation(len(y))
    n_val = max(1, int(round(fraction * len(y))))
    val, tr = order[:n_val], order[n_val:]
    return x[tr], y[tr], x[val], y[val]


def search_run(x_train: np.ndarray, y_train: np.ndarray, model_cfg: ModelConfig,
               cfg: SearchConfig, cnl: CNLConfig, seed: int) -> SearchResult:
    """Architecture search followed by training the selected architecture."""
    if len(y_train) == 0:
        raise ValueError("empty training set")
    x_tr, y_tr, x_val, y_val = holdout(x_train, y_train, cfg.val_fraction, stream(seed, "holdout"))
    store = ParamStore.init(model_cfg, stream(seed, "init"))
    alpha = np.zeros((model_cfg.n_layers, model_cfg.pool_size))
    adam = AdamState.zeros_like(alpha)
    gumbel_rng = stream(seed, "gumbel")
    cnl_rng = stream(seed, "cnl")
    batches = _BatchSampler(len(y_tr), cfg.batch_size, stream(seed, "batches"))
    n_iter = cfg.iterations(len(y_tr))
    baseline = None
    best_val, best_arch, stale = -1.0, None, 0
    history: List[EpochRecord] = []

    for epoch in range(cfg.epochs):
        tau = temperature(epoch, cfg)
        draws, epoch_losses = [], []
        for _ in range(cfg.n_arch):
            draw = gumbel_softmax_sample(alpha, tau, gumbel_rng)
            losses = []
            for _ in range(n_iter):
                idx = batches.next()
                loss, g = loss_and_grad(x_tr[idx], y_tr[idx], draw.hard, store, model_cfg, cnl, cnl_rng)
                store = sgd_step(store, g, cfg.lr_omega)
                losses.append(loss)
            draws.append((draw, float(np.mean(losses))))
            epoch_losses.extend(losses)
        if baseline is None:
            baseline = draws[0][1]
        grad_alpha = arch_grad_estimate(draws, alpha, baseline)
        for _, loss in draws:
            baseline = ema_baseline(baseline, loss)
        adam, alpha = adam_step(adam, alpha, grad_alpha, cfg.lr_alpha)

        candidate = argmax_architecture(alpha)
        val = accuracy(x_val, y_val, candidate, store, model_cfg)
        if cfg.selection == "validation":
            for arch in dict.fromkeys(d.hard for d, _ in draws):
                if arch != candidate:
                    acc = accuracy(x_val, y_val, arch, store, model_cfg)
                    if acc > val:
                        candidate, val = arch, acc
        record = EpochRecord(epoch, tau, float(np.mean(epoch_losses)), val, candidate,
                             tuple(d.hard for d, _ in draws))
        history.append(record)
        log.info("epoch %d tau=%.4f loss=%.4f val=%.4f arch=%s", epoch, tau,
                 record.mean_loss, val, candidate)
        if val > best_val:
            best_val, best_arch, stale = val, candidate, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop after %d epochs", epoch + 1)
                break

    arch = best_arch if cfg.selection == "validation" else argmax_architecture(alpha)
    store, final_losses = train_fixed(x_tr, y_tr, arch, store, model_cfg, cfg, cnl,
                                      cfg.final_epochs, batches, cnl_rng)
    val = accuracy(x_val, y_val, arch, store, model_cfg)
    return SearchResult(arch, store, alpha, history, val, final_losses)


def train_fixed(x: np.ndarray, y: np.ndarray, arch: Architecture, store: ParamStore,
                model_cfg: ModelConfig, cfg: SearchConfig, cnl: CNLConfig, epochs: int,
                batches: Optional[_BatchSampler] = None, cnl_rng=None, seed: int = 0):
    """SGD on the shared angles of one fixed architecture; returns (store, epoch losses)."""
    batches = batches or _BatchSampler(len(y), cfg.batch_size, stream(seed, "batches"))
    cnl_rng = cnl_rng or stream(seed, "cnl")
    per_epoch = max(1, math.ceil(len(y) / batches.batch))
    losses = []
    for epoch in range(epochs):
        running = []
        for _ in range(per_epoch):
            idx = batches.next()
            loss, g = loss_and_grad(x[idx], y[idx], arch, store, model_cfg, cnl, cnl_rng)
            store = sgd_step(store, g, cfg.lr_omega)
            running.append(loss)
        losses.append(float(np.mean(running)))
        log.info("final epoch %d loss=%.4f", epoch, losses[-1])
    return store, losses
