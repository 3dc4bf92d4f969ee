import math
import os
from pathlib import Path

import numpy as np
import pytest

from cnlqnn.simcore import Circuit, GateInstance, GateKind


def embed(u, qubits, n):
    """Dense 2**n matrix of ``u`` acting on ``qubits`` (first listed = most significant local bit)."""
    dim = 2**n
    full = np.zeros((dim, dim), dtype=np.complex128)
    k = len(qubits)
    for i in range(dim):
        for j in range(dim):
            rest_i = [(i >> q) & 1 for q in range(n) if q not in qubits]
            rest_j = [(j >> q) & 1 for q in range(n) if q not in qubits]
            if rest_i != rest_j:
                continue
            li = sum(((i >> q) & 1) << (k - 1 - pos) for pos, q in enumerate(qubits))
            lj = sum(((j >> q) & 1) << (k - 1 - pos) for pos, q in enumerate(qubits))
            full[i, j] = u[li, lj]
    return full


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def random_circuit(n, n_gates, rng, must_include=None):
    """Random gates on random sites; with ``must_include`` also returns where that gate sits."""
    gates = []
    kinds = list(GateKind) if n > 1 else [GateKind.RX, GateKind.RZ]
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds))]
        qubits = tuple(int(q) for q in rng.permutation(n)[: kind.arity])
        gates.append(GateInstance(kind, qubits, rng.uniform(0, 2 * math.pi) if kind.parameterized else None))
    if must_include is not None:
        pos = int(rng.integers(len(gates) + 1))
        qubits = tuple(int(q) for q in rng.permutation(n)[: must_include.arity])
        gates.insert(pos, GateInstance(must_include, qubits, rng.uniform(0, 2 * math.pi)))
        return Circuit(n, gates), pos
    return Circuit(n, gates), None


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


PARAMETERIZED = [k for k in GateKind if k.parameterized]


# -- acceptance reporting --------------------------------------------------

ACCEPTANCE_LINES = {}


def mnist_dir():
    """IDX directory from CNLQNN_MNIST_DIR, else ``data/mnist`` at the repo root, else None."""
    for candidate in (os.environ.get("CNLQNN_MNIST_DIR"), Path(__file__).resolve().parents[1] / "data" / "mnist"):
        if candidate and Path(candidate).is_dir() and any(Path(candidate).glob("train-images*")):
            return str(candidate)
    return None


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
