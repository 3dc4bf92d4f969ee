"""Dense statevector simulation over the search-space gate pool.

Basis convention: bit ``q`` of a basis index is the state of qubit ``q``, so
qubit 0 is the least-significant bit.  Two-qubit matrices are written in the
local basis ``|b(qubits[0]) b(qubits[1])>``, i.e. the first listed qubit is the
more significant one (the control for CNOT and CRZ).

Everything here works on batches: a batch is a ``(B, 2**n)`` complex array and
gate angles may be a scalar or a length-``B`` array, which is what the model,
gradient and noise code use.  The single-state API (`Statevector`,
`apply_gate`, `run_circuit`, ...) is a thin wrapper over the batch kernels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

MAX_QUBITS = 16

Angle = Union[float, np.ndarray, None]


class ParameterMismatchError(ValueError):
    """Angle supplied for a fixed gate, or missing for a parameterized one."""


class GateKind(enum.Enum):
    RX = "RX"
    RZ = "RZ"
    CRZ = "CRZ"
    XX = "XX"
    YY = "YY"
    ZZ = "ZZ"
    CNOT = "CNOT"
    CZ = "CZ"
    ISWAP = "ISWAP"

    @property
    def arity(self) -> int:
        return 1 if self in (GateKind.RX, GateKind.RZ) else 2

    @property
    def parameterized(self) -> bool:
        return self not in (GateKind.CNOT, GateKind.CZ, GateKind.ISWAP)


FULL_POOL = tuple(GateKind)


class Pauli(enum.IntEnum):
    X = 1
    Y = 2
    Z = 3


class NoiseKind(enum.Enum):
    DEPOLARIZING = "DEPOLARIZING"
    BITFLIP = "BITFLIP"
    PHASEFLIP = "PHASEFLIP"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    prob: float

    def __post_init__(self):
        if not isinstance(self.kind, NoiseKind):
            object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"noise probability must lie in [0, 1], got {self.prob}")


@dataclass(frozen=True)
class GateInstance:
    kind: GateKind
    qubits: tuple
    theta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if len(self.qubits) != self.kind.arity:
            raise ValueError(f"{self.kind.name} acts on {self.kind.arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"repeated qubit in {self.qubits}")
        if any(q < 0 for q in self.qubits):
            raise IndexError(f"negative qubit index in {self.qubits}")
        _check_theta(self.kind, self.theta)


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        _check_n_qubits(self.n_qubits)
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits:
                raise IndexError(f"gate {g.kind.name} on {g.qubits} exceeds {self.n_qubits} qubits")

    def __len__(self):
        return len(self.gates)


@dataclass(frozen=True)
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2**self.n_qubits,):
            raise ValueError(f"expected {2**self.n_qubits} amplitudes, got shape {amps.shape}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state is not normalized (|psi|^2 = {norm})")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "Statevector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "Statevector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n_qubits, amps)


def _check_n_qubits(n):
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n}")


def _check_theta(kind: GateKind, theta):
    if kind.parameterized and theta is None:
        raise ParameterMismatchError(f"{kind.name} needs an angle")
    if not kind.parameterized and theta is not None:
        raise ParameterMismatchError(f"{kind.name} takes no angle")


# --------------------------------------------------------------------------
# Gate matrices
# --------------------------------------------------------------------------

_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128)
_CZ = np.diag([1, 1, 1, -1]).astype(np.complex128)
_ISWAP = np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=np.complex128)
_XX = np.fliplr(np.eye(4)).astype(np.complex128)
_YY = np.array([[0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]], dtype=np.complex128)

_FIXED = {GateKind.CNOT: _CNOT, GateKind.CZ: _CZ, GateKind.ISWAP: _ISWAP}

_DIAGONAL = frozenset({GateKind.RZ, GateKind.ZZ, GateKind.CZ, GateKind.CRZ})


def gate_matrices(kind: GateKind, theta: Angle = None) -> np.ndarray:
    """Stack of unitaries, shape ``(m, d, d)`` with ``m = len(theta)`` or 1."""
    _check_theta(kind, theta)
    if not kind.parameterized:
        return _FIXED[kind][None]
    t = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    c = np.cos(t / 2)
    s = np.sin(t / 2)
    m = t.shape[0]
    if kind is GateKind.RX:
        u = np.empty((m, 2, 2), dtype=np.complex128)
        u[:, 0, 0] = c
        u[:, 1, 1] = c
        u[:, 0, 1] = -1j * s
        u[:, 1, 0] = -1j * s
        return u
    em = np.exp(-0.5j * t)
    ep = np.exp(0.5j * t)
    if kind is GateKind.RZ:
        u = np.zeros((m, 2, 2), dtype=np.complex128)
        u[:, 0, 0] = em
        u[:, 1, 1] = ep
        return u
    if kind is GateKind.CRZ:
        u = np.zeros((m, 4, 4), dtype=np.complex128)
        u[:, 0, 0] = 1.0
        u[:, 1, 1] = 1.0
        u[:, 2, 2] = em
        u[:, 3, 3] = ep
        return u
    if kind is GateKind.ZZ:
        u = np.zeros((m, 4, 4), dtype=np.complex128)
        u[:, 0, 0] = em
        u[:, 1, 1] = ep
        u[:, 2, 2] = ep
        u[:, 3, 3] = em
        return u
    # XX / YY: cos(t/2) I - i sin(t/2) P⊗P
    pp = _XX if kind is GateKind.XX else _YY
    return c[:, None, None] * np.eye(4) - 1j * s[:, None, None] * pp


def gate_matrix(kind: GateKind, theta: Optional[float] = None) -> np.ndarray:
    """Unitary of a single gate; 2x2 for one-qubit kinds, 4x4 otherwise.

    >>> np.round(gate_matrix(GateKind.RX, np.pi), 12)
    array([[0.+0.j, 0.-1.j],
           [0.-1.j, 0.+0.j]])
    """
    if theta is not None and np.ndim(theta) != 0:
        raise ParameterMismatchError("gate_matrix takes a scalar angle; use gate_matrices for batches")
    return gate_matrices(kind, theta)[0]


# --------------------------------------------------------------------------
# Batch kernels
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _apply_1q(psi, u, q):
    nb, dim = psi.shape
    out = np.empty_like(psi)
    lo = 1 << q
    mask = lo - 1
    per_row = u.shape[0] > 1
    for b in range(nb):
        k = b if per_row else 0
        u00 = u[k, 0, 0]
        u01 = u[k, 0, 1]
        u10 = u[k, 1, 0]
        u11 = u[k, 1, 1]
        for j in range(dim >> 1):
            i0 = ((j >> q) << (q + 1)) | (j & mask)
            i1 = i0 | lo
            a0 = psi[b, i0]
            a1 = psi[b, i1]
            out[b, i0] = u00 * a0 + u01 * a1
            out[b, i1] = u10 * a0 + u11 * a1
    return out


@njit(cache=True, nogil=True)
def _apply_2q(psi, u, qa, qb):
    # qa is the more significant bit of the local 4-dim index
    nb, dim = psi.shape
    out = np.empty_like(psi)
    ma = 1 << qa
    mb = 1 << qb
    lo = min(qa, qb)
    hi = max(qa, qb)
    per_row = u.shape[0] > 1
    idx = np.empty(4, dtype=np.int64)
    amp = np.empty(4, dtype=np.complex128)
    for b in range(nb):
        k = b if per_row else 0
        for j in range(dim >> 2):
            base = ((j >> lo) << (lo + 1)) | (j & ((1 << lo) - 1))
            base = ((base >> hi) << (hi + 1)) | (base & ((1 << hi) - 1))
            idx[0] = base
            idx[1] = base | mb
            idx[2] = base | ma
            idx[3] = base | ma | mb
            for r in range(4):
                amp[r] = psi[b, idx[r]]
            for r in range(4):
                acc = 0j
                for c in range(4):
                    acc += u[k, r, c] * amp[c]
                out[b, idx[r]] = acc
    return out


@njit(cache=True, nogil=True)
def _apply_diag(psi, d, qubits):
    # d: (rows or 1, 2**len(qubits)) diagonal; qubits[0] is the most significant local bit
    nb, dim = psi.shape
    out = np.empty_like(psi)
    per_row = d.shape[0] > 1
    m = qubits.shape[0]
    for b in range(nb):
        k = b if per_row else 0
        for i in range(dim):
            loc = 0
            for t in range(m):
                loc = (loc << 1) | ((i >> qubits[t]) & 1)
            out[b, i] = d[k, loc] * psi[b, i]
    return out


@njit(cache=True, nogil=True)
def _apply_pauli(psi, codes, q):
    # codes: 0 = I, 1 = X, 2 = Y, 3 = Z, one per row
    nb, dim = psi.shape
    out = psi.copy()
    lo = 1 << q
    mask = lo - 1
    for b in range(nb):
        code = codes[b]
        if code == 0:
            continue
        for j in range(dim >> 1):
            i0 = ((j >> q) << (q + 1)) | (j & mask)
            i1 = i0 | lo
            a0 = psi[b, i0]
            a1 = psi[b, i1]
            if code == 1:
                out[b, i0] = a1
                out[b, i1] = a0
            elif code == 2:
                out[b, i0] = -1j * a1
                out[b, i1] = 1j * a0
            else:
                out[b, i1] = -a1
    return out


@njit(cache=True, nogil=True)
def _expect_z(psi, n_qubits):
    nb, dim = psi.shape
    out = np.zeros((nb, n_qubits))
    for b in range(nb):
        for i in range(dim):
            p = psi[b, i].real ** 2 + psi[b, i].imag ** 2
            for q in range(n_qubits):
                if (i >> q) & 1:
                    out[b, q] -= p
                else:
                    out[b, q] += p
    return out


def n_qubits_of(psi: np.ndarray) -> int:
    return int(psi.shape[-1]).bit_length() - 1


def zero_batch(n_qubits: int, rows: int) -> np.ndarray:
    psi = np.zeros((rows, 2**n_qubits), dtype=np.complex128)
    psi[:, 0] = 1.0
    return psi


def apply_batch(psi: np.ndarray, kind: GateKind, qubits: Sequence[int], theta: Angle = None) -> np.ndarray:
    """Apply one gate to every row of ``psi``; ``theta`` may vary per row."""
    n = n_qubits_of(psi)
    for q in qubits:
        if not 0 <= q < n:
            raise IndexError(f"qubit {q} out of range for {n} qubits")
    u = gate_matrices(kind, theta)
    if u.shape[0] not in (1, psi.shape[0]):
        raise ValueError(f"{u.shape[0]} angles for a batch of {psi.shape[0]}")
    if kind in _DIAGONAL:
        d = np.ascontiguousarray(np.diagonal(u, axis1=1, axis2=2))
        return _apply_diag(psi, d, np.asarray(qubits, dtype=np.int64))
    if kind.arity == 1:
        return _apply_1q(psi, u, int(qubits[0]))
    return _apply_2q(psi, u, int(qubits[0]), int(qubits[1]))


def run_ops(psi: np.ndarray, ops) -> np.ndarray:
    """Fold ``apply_batch`` over ``(kind, qubits, theta)`` triples."""
    for kind, qubits, theta in ops:
        psi = apply_batch(psi, kind, qubits, theta)
    return psi


def apply_paulis(psi: np.ndarray, codes: np.ndarray, qubit: int) -> np.ndarray:
    return _apply_pauli(psi, np.asarray(codes, dtype=np.int8), int(qubit))


_MEAN_Z_WEIGHTS = {}


def mean_z_batch(psi: np.ndarray) -> np.ndarray:
    """Mean of ``<Z_q>`` over all qubits for every row."""
    n = n_qubits_of(psi)
    w = _MEAN_Z_WEIGHTS.get(n)
    if w is None:
        popcount = np.array([bin(i).count("1") for i in range(2**n)], dtype=np.float64)
        w = _MEAN_Z_WEIGHTS[n] = (n - 2.0 * popcount) / n
    probs = psi.real**2 + psi.imag**2
    return probs @ w


def expect_z_batch(psi: np.ndarray) -> np.ndarray:
    """``<Z_q>`` for every row and qubit, shape ``(B, n)``."""
    return _expect_z(psi, n_qubits_of(psi))


# --------------------------------------------------------------------------
# Single-state API
# --------------------------------------------------------------------------


def apply_gate(state: Statevector, gate: GateInstance) -> Statevector:
    if max(gate.qubits) >= state.n_qubits:
        raise IndexError(f"gate on {gate.qubits} does not fit {state.n_qubits} qubits")
    out = apply_batch(state.amplitudes[None, :], gate.kind, gate.qubits, gate.theta)
    return Statevector(state.n_qubits, out[0])


def run_circuit(circuit: Circuit, initial: Statevector) -> Statevector:
    if circuit.n_qubits != initial.n_qubits:
        raise ValueError(f"circuit has {circuit.n_qubits} qubits, state has {initial.n_qubits}")
    state = initial
    for gate in circuit.gates:
        state = apply_gate(state, gate)
    return state


def expectation_z(state: Statevector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    return float(expect_z_batch(state.amplitudes[None, :])[0, qubit])


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------


def sample_error(noise: NoiseSpec, rng: np.random.Generator) -> Optional[Pauli]:
    """One Pauli error draw for one touched qubit, or ``None``."""
    if rng.random() >= noise.prob:
        return None
    if noise.kind is NoiseKind.BITFLIP:
        return Pauli.X
    if noise.kind is NoiseKind.PHASEFLIP:
        return Pauli.Z
    return Pauli(int(rng.integers(3)) + 1)


def sample_error_codes(noise: NoiseSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised `sample_error`: int8 codes (0 = no error) for ``size`` rows."""
    hit = rng.random(size) < noise.prob
    if noise.kind is NoiseKind.BITFLIP:
        codes = np.full(size, Pauli.X, dtype=np.int8)
    elif noise.kind is NoiseKind.PHASEFLIP:
        codes = np.full(size, Pauli.Z, dtype=np.int8)
    else:
        codes = (rng.integers(3, size=size) + 1).astype(np.int8)
    return np.where(hit, codes, 0).astype(np.int8)


def run_noisy_trajectory(
    circuit: Circuit, initial: Statevector, noise: NoiseSpec, rng: np.random.Generator
) -> Statevector:
    if circuit.n_qubits != initial.n_qubits:
        raise ValueError(f"circuit has {circuit.n_qubits} qubits, state has {initial.n_qubits}")
    state = initial
    for gate in circuit.gates:
        state = apply_gate(state, gate)
        for q in gate.qubits:
            err = sample_error(noise, rng)
            if err is not None:
                amps = apply_paulis(state.amplitudes[None, :], np.array([int(err)]), q)
                state = Statevector(state.n_qubits, amps[0])
    return state


def run_noisy_batch(psi: np.ndarray, ops, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Independent trajectories, one per row, with errors after each gate."""
    rows = psi.shape[0]
    for kind, qubits, theta in ops:
        psi = apply_batch(psi, kind, qubits, theta)
        if noise.prob > 0:
            for q in qubits:
                psi = apply_paulis(psi, sample_error_codes(noise, rng, rows), q)
    return psi
