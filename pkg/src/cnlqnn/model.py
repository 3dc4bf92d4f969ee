"""Hybrid classifier: classical noise layer, RX angle encoding, a supernet of
gate layers selected by an architecture, and a mean-Z readout.

Layer realisation: a one-qubit choice is fanned out to every qubit; a
two-qubit choice is laid on a ring ``(q, q+1)`` for ``q < n-1`` closed by
``(n-1, 0)`` when ``n > 2``.  Every gate instance owns one supernet angle
``omega[layer, pool_index, instance]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .grad import shift_gradients
from .simcore import (
    FULL_POOL,
    Circuit,
    GateInstance,
    GateKind,
    mean_z_batch,
    run_ops,
    zero_batch,
)

TWO_PI = 2 * math.pi
# rows per simulation chunk are capped so a chunk holds about 2**21 amplitudes
_CHUNK_AMPLITUDES = 2**21


@dataclass(frozen=True)
class ModelConfig:
    n_qubits: int
    n_layers: int = 6
    gate_pool: tuple = FULL_POOL

    def __post_init__(self):
        pool = tuple(GateKind(g) if not isinstance(g, GateKind) else g for g in self.gate_pool)
        object.__setattr__(self, "gate_pool", pool)
        if not 1 <= self.n_qubits <= 16:
            raise ValueError(f"n_qubits must be in 1..16, got {self.n_qubits}")
        if self.n_layers < 0:
            raise ValueError("n_layers must be non-negative")
        if not pool:
            raise ValueError("gate pool is empty")
        if len(set(pool)) != len(pool):
            raise ValueError(f"gate pool has duplicates: {[g.name for g in pool]}")
        if self.n_qubits < 2 and any(g.arity == 2 for g in pool):
            raise ValueError("two-qubit gates in the pool need at least 2 qubits")

    @property
    def pool_size(self) -> int:
        return len(self.gate_pool)


@dataclass(frozen=True)
class CNLConfig:
    h: float = 0.02
    gamma: float = 1.0

    def __post_init__(self):
        if self.h < 0 or self.gamma < 0:
            raise ValueError("CNL magnitude h and weight gamma must be non-negative")


Architecture = Tuple[int, ...]


def check_architecture(arch: Sequence[int], cfg: ModelConfig) -> Architecture:
    arch = tuple(int(a) for a in arch)
    if len(arch) != cfg.n_layers:
        raise ValueError(f"architecture has {len(arch)} layers, model has {cfg.n_layers}")
    for layer, a in enumerate(arch):
        if not 0 <= a < cfg.pool_size:
            raise ValueError(f"layer {layer}: choice {a} outside pool of {cfg.pool_size}")
    return arch


@dataclass
class ParamStore:
    """Supernet angles ``omega[layer, pool_index, instance]``.

    Slots of fixed (non-parameterized) gates exist but stay zero and unused.
    """

    omega: np.ndarray

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ParamStore":
        omega = rng.uniform(0.0, TWO_PI, size=(cfg.n_layers, cfg.pool_size, cfg.n_qubits))
        fixed = [i for i, g in enumerate(cfg.gate_pool) if not g.parameterized]
        omega[:, fixed, :] = 0.0
        return cls(omega)

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ParamStore":
        return cls(np.zeros((cfg.n_layers, cfg.pool_size, cfg.n_qubits)))

    def __getitem__(self, key):
        return float(self.omega[key])

    def copy(self) -> "ParamStore":
        return ParamStore(self.omega.copy())


def ring_pairs(n: int) -> List[Tuple[int, int]]:
    pairs = [(q, q + 1) for q in range(n - 1)]
    if n > 2:
        pairs.append((n - 1, 0))
    return pairs


def layer_ops(arch: Sequence[int], store: ParamStore, cfg: ModelConfig):
    """Ops ``(kind, qubits, theta)`` for the variational part, plus for each
    op its omega key ``(layer, pool_index, instance)`` or ``None``."""
    arch = check_architecture(arch, cfg)
    ops, keys = [], []
    for layer, choice in enumerate(arch):
        kind = cfg.gate_pool[choice]
        sites = [(q,) for q in range(cfg.n_qubits)] if kind.arity == 1 else ring_pairs(cfg.n_qubits)
        for inst, qubits in enumerate(sites):
            if kind.parameterized:
                key = (layer, choice, inst)
                ops.append((kind, qubits, float(store.omega[key])))
                keys.append(key)
            else:
                ops.append((kind, qubits, None))
                keys.append(None)
    return ops, keys


def build_circuit(arch: Sequence[int], store: ParamStore, cfg: ModelConfig) -> Circuit:
    ops, _ = layer_ops(arch, store, cfg)
    return Circuit(cfg.n_qubits, [GateInstance(k, q, t) for k, q, t in ops])


def encode(x: np.ndarray, n_qubits: Optional[int] = None) -> List[GateInstance]:
    """``RX(2 pi x_j)`` on qubit ``j``; pixels in [0, 1] become angles in [0, 2 pi]."""
    x = np.asarray(x, dtype=np.float64)
    if n_qubits is not None and x.shape != (n_qubits,):
        raise ValueError(f"expected {n_qubits} features, got shape {x.shape}")
    return [GateInstance(GateKind.RX, (j,), TWO_PI * float(v)) for j, v in enumerate(x)]


def encode_ops(X: np.ndarray):
    return [(GateKind.RX, (j,), TWO_PI * X[:, j]) for j in range(X.shape[1])]


def cnl_perturb(x: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
    """``x + h * sign(xi)`` with standard-normal ``xi``; sign(0) = +1, no clipping."""
    if h < 0:
        raise ValueError("h must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    xi = rng.standard_normal(x.shape)
    return x + h * np.where(xi >= 0, 1.0, -1.0)


def loss_mse(y, yhat) -> float:
    """Squared error, averaged when given arrays."""
    return float(np.mean((np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64)) ** 2))


def _check_inputs(X, cfg):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != cfg.n_qubits:
        raise ValueError(f"expected {cfg.n_qubits} features per sample, got {X.shape[1]}")
    return X


def _chunks(rows: int, n_qubits: int, factor: int = 1):
    step = max(1, _CHUNK_AMPLITUDES // (2**n_qubits * factor))
    for start in range(0, rows, step):
        yield slice(start, min(rows, start + step))


def predict(X: np.ndarray, arch: Sequence[int], store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    X = _check_inputs(X, cfg)
    var_ops, _ = layer_ops(arch, store, cfg)
    out = np.empty(X.shape[0])
    for sl in _chunks(X.shape[0], cfg.n_qubits):
        psi = run_ops(zero_batch(cfg.n_qubits, sl.stop - sl.start), encode_ops(X[sl]) + var_ops)
        out[sl] = mean_z_batch(psi)
    return out


def forward(x: np.ndarray, arch: Sequence[int], store: ParamStore, cfg: ModelConfig) -> float:
    return float(predict(np.asarray(x)[None, :], arch, store, cfg)[0])


def accuracy(X, y, arch, store, cfg) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("accuracy of an empty sample list")
    return sign_accuracy(predict(X, arch, store, cfg), y)


def sign_accuracy(yhat: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("accuracy of an empty sample list")
    pred = np.where(np.asarray(yhat) >= 0, 1.0, -1.0)
    return float(np.mean(pred == np.asarray(y)))


def readout_gradients(X: np.ndarray, arch, store: ParamStore, cfg: ModelConfig, targets: str):
    """Readout values and their shift-rule derivatives for every row of ``X``.

    ``targets`` is ``"omega"`` (variational angles; keys returned) or
    ``"input"`` (encoding angles, one per feature).
    """
    X = _check_inputs(X, cfg)
    var_ops, keys = layer_ops(arch, store, cfg)
    n_enc = X.shape[1]
    if targets == "omega":
        idx = [n_enc + i for i, k in enumerate(keys) if k is not None]
        tkeys = [k for k in keys if k is not None]
    elif targets == "input":
        idx = list(range(n_enc))
        tkeys = None
    else:
        raise ValueError(targets)
    values = np.empty(X.shape[0])
    grads = np.empty((len(idx), X.shape[0]))
    for sl in _chunks(X.shape[0], cfg.n_qubits, factor=4):
        rows = sl.stop - sl.start
        ops = encode_ops(X[sl]) + var_ops
        g, v = shift_gradients(zero_batch(cfg.n_qubits, rows), ops, idx, with_value=True)
        grads[:, sl] = g
        values[sl] = v
    return values, grads, tkeys


def total_loss(X, y, arch, store, cfg, cnl: CNLConfig, rng: np.random.Generator) -> float:
    X = _check_inputs(X, cfg)
    clean = loss_mse(y, predict(X, arch, store, cfg))
    if cnl.gamma == 0:
        return clean
    Xp = cnl_perturb(X, cnl.h, rng)
    return clean + cnl.gamma * loss_mse(y, predict(Xp, arch, store, cfg))


def loss_and_grad(X, y, arch, store, cfg, cnl: CNLConfig, rng: np.random.Generator,
                  perturbed: Optional[np.ndarray] = None):
    """Total loss and its omega gradient with one frozen CNL perturbation.

    Returns ``(loss, grad)`` where ``grad`` has the shape of ``store.omega``.
    """
    X = _check_inputs(X, cfg)
    y = np.asarray(y, dtype=np.float64)
    b = X.shape[0]
    if cnl.gamma > 0:
        Xp = cnl_perturb(X, cnl.h, rng) if perturbed is None else perturbed
        rows = np.concatenate([X, Xp])
        targets = np.concatenate([y, y])
        weight = np.concatenate([np.full(b, 1.0 / b), np.full(b, cnl.gamma / b)])
    else:
        rows, targets, weight = X, y, np.full(b, 1.0 / b)
    values, grads, keys = readout_gradients(rows, arch, store, cfg, "omega")
    resid = targets - values
    loss = float(np.sum(weight * resid**2))
    dl_dy = -2.0 * weight * resid
    g = np.zeros_like(store.omega)
    for key, row in zip(keys, grads @ dl_dy):
        g[key] += row
    return loss, g


@dataclass
class QuantumModel:
    """Trained quantum classifier exposed through the attack interface."""

    cfg: ModelConfig
    arch: Architecture
    store: ParamStore

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(X, self.arch, self.store, self.cfg)

    def accuracy(self, X, y) -> float:
        return sign_accuracy(self.predict(X), y)

    def input_gradient(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """dL/dx for ``L = (y - yhat)^2``, shape like ``X``."""
        values, grads, _ = readout_gradients(X, self.arch, self.store, self.cfg, "input")
        dl_dy = -2.0 * (np.asarray(y, dtype=np.float64) - values)
        return (grads * dl_dy).T * TWO_PI

    def circuit_ops(self, X: np.ndarray):
        var_ops, _ = layer_ops(self.arch, self.store, self.cfg)
        return encode_ops(_check_inputs(X, self.cfg)) + var_ops
