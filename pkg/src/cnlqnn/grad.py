"""Parameter-shift gradients of mean-Z readouts.

Two entry points share one rule set:

* `param_shift_grad` / `finite_diff_oracle` work on a single `Circuit` and are
  what the tests compare against each other.
* `shift_gradients` is the batched workhorse used for training and attacks.
  It walks the op list once, and at every target op reruns only the suffix
  with the angle shifted by +-pi/2, so no prefix is ever recomputed.

CRZ has a three-eigenvalue generator, so it is differentiated through
``CRZ(t) = RZ(t/2)_T . CNOT . RZ(-t/2)_T . CNOT`` (rightmost first), applying
the two-term rule to each RZ factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .simcore import (
    Circuit,
    GateInstance,
    GateKind,
    Statevector,
    apply_batch,
    expect_z_batch,
    mean_z_batch,
    run_circuit,
    run_ops,
)

SHIFT = math.pi / 2
FD_STEP = 1e-5

TWO_TERM_KINDS = frozenset({GateKind.RX, GateKind.RZ, GateKind.XX, GateKind.YY, GateKind.ZZ})


class NotDifferentiableError(ValueError):
    pass


@dataclass(frozen=True)
class GradRequest:
    circuit: Circuit
    initial: Statevector
    target: int
    readout: Optional[tuple] = None  # qubits averaged in the readout; None = all

    def __post_init__(self):
        if not 0 <= self.target < len(self.circuit.gates):
            raise IndexError(f"target gate {self.target} outside circuit of {len(self.circuit)} gates")
        if not self.circuit.gates[self.target].kind.parameterized:
            kind = self.circuit.gates[self.target].kind.name
            raise NotDifferentiableError(f"gate {self.target} ({kind}) has no angle")

    @property
    def readout_qubits(self) -> tuple:
        if self.readout is None:
            return tuple(range(self.circuit.n_qubits))
        return tuple(self.readout)


def readout_value(state: Statevector, qubits: Sequence[int]) -> float:
    z = expect_z_batch(state.amplitudes[None, :])[0]
    return float(np.mean(z[list(qubits)]))


def _evaluate(req: GradRequest, gates) -> float:
    circ = Circuit(req.circuit.n_qubits, gates)
    return readout_value(run_circuit(circ, req.initial), req.readout_qubits)


def _with_angle(req: GradRequest, theta: float):
    gates = list(req.circuit.gates)
    g = gates[req.target]
    gates[req.target] = GateInstance(g.kind, g.qubits, theta)
    return gates


def crz_decomposition(control: int, target: int, theta: float, shift_a: float = 0.0, shift_b: float = 0.0):
    """Gate list equal to ``CRZ(theta)`` on (control, target).

    ``shift_a`` offsets the trailing ``RZ(theta/2)``, ``shift_b`` the inner
    ``RZ(-theta/2)``.
    """
    return [
        GateInstance(GateKind.CNOT, (control, target)),
        GateInstance(GateKind.RZ, (target,), -theta / 2 + shift_b),
        GateInstance(GateKind.CNOT, (control, target)),
        GateInstance(GateKind.RZ, (target,), theta / 2 + shift_a),
    ]


def param_shift_grad(req: GradRequest) -> float:
    gate = req.circuit.gates[req.target]
    theta = gate.theta
    if gate.kind in TWO_TERM_KINDS:
        plus = _evaluate(req, _with_angle(req, theta + SHIFT))
        minus = _evaluate(req, _with_angle(req, theta - SHIFT))
        return (plus - minus) / 2
    if gate.kind is GateKind.CRZ:
        before = list(req.circuit.gates[: req.target])
        after = list(req.circuit.gates[req.target + 1 :])
        c, t = gate.qubits

        def term(shift_a, shift_b):
            return _evaluate(req, before + crz_decomposition(c, t, theta, shift_a, shift_b) + after)

        d_a = (term(SHIFT, 0.0) - term(-SHIFT, 0.0)) / 2
        d_b = (term(0.0, SHIFT) - term(0.0, -SHIFT)) / 2
        return 0.5 * d_a - 0.5 * d_b
    raise NotDifferentiableError(f"no shift rule for {gate.kind.name}")


def finite_diff_oracle(req: GradRequest, step: float = FD_STEP) -> float:
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    theta = req.circuit.gates[req.target].theta
    plus = _evaluate(req, _with_angle(req, theta + step))
    minus = _evaluate(req, _with_angle(req, theta - step))
    return (plus - minus) / (2 * step)


# --------------------------------------------------------------------------
# Batched
# --------------------------------------------------------------------------


def _readout(psi, readout):
    if readout is None:
        return mean_z_batch(psi)
    return expect_z_batch(psi)[:, list(readout)].mean(axis=1)


def _shifted_angles(theta, rows, delta):
    t = np.broadcast_to(np.asarray(theta, dtype=np.float64), (rows,))
    return np.concatenate([t + delta, t - delta])


def _tile_ops(ops):
    """Ops for a row-doubled batch: per-row angle arrays are repeated."""
    return [(kind, qubits, np.concatenate([theta, theta]) if np.ndim(theta) else theta)
            for kind, qubits, theta in ops]


def shift_gradients(psi0: np.ndarray, ops, targets: Sequence[int], readout=None, with_value=False):
    """d(readout)/d(theta_k) for every target op ``k`` and every batch row.

    ``ops`` is a list of ``(kind, qubits, theta)`` with scalar or per-row
    angles; returns shape ``(len(targets), B)`` in the order of ``targets``,
    and with ``with_value`` also the unshifted readout per row.
    """
    rows = psi0.shape[0]
    order = {k: i for i, k in enumerate(targets)}
    if len(order) != len(targets):
        raise ValueError("duplicate gradient targets")
    out = np.zeros((len(targets), rows))
    psi = psi0
    remaining = len(targets)
    for k, (kind, qubits, theta) in enumerate(ops):
        if remaining == 0 and not with_value:
            break
        if k in order:
            suffix = _tile_ops(ops[k + 1 :])
            doubled = np.concatenate([psi, psi])
            if kind in TWO_TERM_KINDS:
                shifted = apply_batch(doubled, kind, qubits, _shifted_angles(theta, rows, SHIFT))
                e = _readout(run_ops(shifted, suffix), readout)
                out[order[k]] = (e[:rows] - e[rows:]) / 2
            elif kind is GateKind.CRZ:
                c, t = qubits
                half = np.broadcast_to(np.asarray(theta, dtype=np.float64), (rows,)) / 2
                pm = np.concatenate([np.full(rows, SHIFT), np.full(rows, -SHIFT)])
                base = np.concatenate([half, half])
                # trailing RZ(theta/2) shifted
                a = apply_batch(doubled, GateKind.CNOT, (c, t))
                a = apply_batch(a, GateKind.RZ, (t,), -base)
                a = apply_batch(a, GateKind.CNOT, (c, t))
                a = apply_batch(a, GateKind.RZ, (t,), base + pm)
                ea = _readout(run_ops(a, suffix), readout)
                # inner RZ(-theta/2) shifted
                b = apply_batch(doubled, GateKind.CNOT, (c, t))
                b = apply_batch(b, GateKind.RZ, (t,), -base + pm)
                b = apply_batch(b, GateKind.CNOT, (c, t))
                b = apply_batch(b, GateKind.RZ, (t,), base)
                eb = _readout(run_ops(b, suffix), readout)
                out[order[k]] = 0.5 * (ea[:rows] - ea[rows:]) / 2 - 0.5 * (eb[:rows] - eb[rows:]) / 2
            else:
                raise NotDifferentiableError(f"op {k} ({kind.name}) has no angle")
            remaining -= 1
        psi = apply_batch(psi, kind, qubits, theta)
    if remaining:
        raise IndexError("gradient target outside the op list")
    if with_value:
        return out, _readout(psi, readout)
    return out


def input_grad(model, x: np.ndarray, y: float, j: int) -> float:
    """dL/dx_j for one sample, with ``L = (y - yhat)**2``.

    Goes through the model's encoding chain rule (``d theta_j / d x_j = 2 pi``);
    see `QuantumModel.input_gradient`.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= j < x.shape[-1]:
        raise IndexError(f"pixel {j} out of range for {x.shape[-1]} features")
    return float(model.input_gradient(x[None, :], np.array([y], dtype=np.float64))[0, j])
