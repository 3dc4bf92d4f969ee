import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from cnlqnn.simcore import (
    Circuit,
    GateInstance,
    GateKind,
    NoiseKind,
    NoiseSpec,
    ParameterMismatchError,
    Pauli,
    Statevector,
    apply_batch,
    apply_gate,
    expect_z_batch,
    expectation_z,
    gate_matrix,
    mean_z_batch,
    run_circuit,
    run_noisy_batch,
    run_noisy_trajectory,
    sample_error,
    sample_error_codes,
    zero_batch,
)

from conftest import PARAMETERIZED, embed, random_state

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)
GENERATORS = {
    GateKind.RX: X,
    GateKind.RZ: Z,
    GateKind.XX: np.kron(X, X),
    GateKind.YY: np.kron(Y, Y),
    GateKind.ZZ: np.kron(Z, Z),
    # control on the high local bit: |1><1| (x) Z
    GateKind.CRZ: np.kron(np.diag([0.0, 1.0]), Z),
}


@pytest.mark.parametrize("kind", PARAMETERIZED)
@pytest.mark.parametrize("theta", [0.0, 0.37, 1.9, math.pi, 5.5])
def test_matrix_matches_generator_exponential(kind, theta):
    expected = expm(-0.5j * theta * GENERATORS[kind])
    np.testing.assert_allclose(gate_matrix(kind, theta), expected, atol=1e-12)


def test_fixed_matrices():
    np.testing.assert_array_equal(gate_matrix(GateKind.CZ), np.diag([1, 1, 1, -1]))
    np.testing.assert_allclose(gate_matrix(GateKind.RX, math.pi), [[0, -1j], [-1j, 0]], atol=1e-15)
    np.testing.assert_array_equal(gate_matrix(GateKind.ZZ, 0.0), np.eye(4))
    cnot = gate_matrix(GateKind.CNOT)
    assert cnot[3, 2] == 1 and cnot[2, 3] == 1 and cnot[0, 0] == 1


@pytest.mark.parametrize("kind", list(GateKind))
def test_unitarity(kind, rng):
    thetas = rng.uniform(0, 2 * math.pi, 100) if kind.parameterized else [None]
    for t in thetas:
        u = gate_matrix(kind, t)
        assert np.max(np.abs(u.conj().T @ u - np.eye(len(u)))) <= 1e-12


@pytest.mark.parametrize("kind", [GateKind.CNOT, GateKind.CZ, GateKind.ISWAP])
def test_fixed_gate_rejects_angle(kind):
    with pytest.raises(ParameterMismatchError):
        gate_matrix(kind, 0.1)


@pytest.mark.parametrize("kind", PARAMETERIZED)
def test_parameterized_gate_needs_angle(kind):
    with pytest.raises(ParameterMismatchError):
        gate_matrix(kind)
    with pytest.raises(ParameterMismatchError):
        GateInstance(kind, (0,) if kind.arity == 1 else (0, 1))


def test_gate_instance_validation():
    with pytest.raises(ValueError):
        GateInstance(GateKind.CNOT, (1, 1))
    with pytest.raises(ValueError):
        GateInstance(GateKind.RX, (0, 1), 0.1)
    with pytest.raises(IndexError):
        Circuit(2, [GateInstance(GateKind.RX, (2,), 0.1)])


def test_statevector_invariants():
    with pytest.raises(ValueError):
        Statevector(1, [1.0, 1.0])
    with pytest.raises(ValueError):
        Statevector(2, [1.0, 0.0])
    with pytest.raises(ValueError):
        Statevector(17, np.zeros(2))


def test_apply_gate_examples():
    s = apply_gate(Statevector.zero(1), GateInstance(GateKind.RX, (0,), math.pi))
    np.testing.assert_allclose(s.amplitudes, [0, -1j], atol=1e-15)
    s = apply_gate(Statevector.basis(2, 0b01), GateInstance(GateKind.CNOT, (0, 1)))
    np.testing.assert_array_equal(s.amplitudes, Statevector.basis(2, 0b11).amplitudes)
    s = apply_gate(Statevector.basis(2, 0b01), GateInstance(GateKind.ISWAP, (0, 1)))
    np.testing.assert_array_equal(s.amplitudes, [0, 0, 1j, 0])
    with pytest.raises(IndexError):
        apply_gate(Statevector.zero(1), GateInstance(GateKind.CNOT, (0, 1)))


def test_run_circuit_examples(rng):
    zero = Statevector.zero(2)
    assert np.array_equal(run_circuit(Circuit(2), zero).amplitudes, zero.amplitudes)
    half = Circuit(1, [GateInstance(GateKind.RX, (0,), math.pi / 2)] * 2)
    full = Circuit(1, [GateInstance(GateKind.RX, (0,), math.pi)])
    np.testing.assert_allclose(run_circuit(half, Statevector.zero(1)).amplitudes,
                               run_circuit(full, Statevector.zero(1)).amplitudes, atol=1e-12)
    psi = Statevector(2, random_state(2, rng))
    twice = Circuit(2, [GateInstance(GateKind.CNOT, (0, 1))] * 2)
    np.testing.assert_allclose(run_circuit(twice, psi).amplitudes, psi.amplitudes, atol=1e-15)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
def test_expectation_of_rx(theta):
    s = apply_gate(Statevector.zero(1), GateInstance(GateKind.RX, (0,), theta))
    assert expectation_z(s, 0) == pytest.approx(math.cos(theta), abs=1e-12)


def test_expectation_examples():
    assert expectation_z(Statevector.zero(1), 0) == 1.0
    s = apply_gate(Statevector.zero(1), GateInstance(GateKind.RX, (0,), math.pi / 2))
    assert abs(expectation_z(s, 0)) <= 1e-12
    with pytest.raises(IndexError):
        expectation_z(s, 1)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_embedding_matches_kronecker(n, rng):
    for kind in GateKind:
        theta = rng.uniform(0, 2 * math.pi) if kind.parameterized else None
        u = gate_matrix(kind, theta)
        sites = [(q,) for q in range(n)] if kind.arity == 1 else [
            (a, b) for a in range(n) for b in range(n) if a != b]
        for qubits in sites:
            psi = random_state(n, rng)
            out = apply_batch(psi[None, :].copy(), kind, qubits, theta)[0]
            assert np.max(np.abs(out - embed(u, qubits, n) @ psi)) <= 1e-12


def test_single_qubit_embedding_is_tensor_product(rng):
    n = 3
    factors = [random_state(1, rng) for _ in range(n)]
    product = factors[2]
    for f in (factors[1], factors[0]):
        product = np.kron(product, f)  # qubit 0 is the least-significant factor
    u = gate_matrix(GateKind.RX, 0.7)
    out = apply_batch(product[None, :].copy(), GateKind.RX, (1,), 0.7)[0]
    expected = np.kron(np.kron(factors[2], u @ factors[1]), factors[0])
    assert np.max(np.abs(out - expected)) <= 1e-12


def test_per_row_angles_match_rowwise_application(rng):
    thetas = rng.uniform(0, 6, 5)
    psi = np.stack([random_state(3, rng) for _ in range(5)])
    for kind in PARAMETERIZED:
        qubits = (2,) if kind.arity == 1 else (2, 0)
        batch = apply_batch(psi.copy(), kind, qubits, thetas)
        for r in range(5):
            row = apply_batch(psi[r : r + 1].copy(), kind, qubits, float(thetas[r]))
            np.testing.assert_allclose(batch[r], row[0], atol=1e-14)


def test_mean_z_matches_per_qubit_expectations(rng):
    psi = np.stack([random_state(4, rng) for _ in range(6)])
    np.testing.assert_allclose(mean_z_batch(psi), expect_z_batch(psi).mean(axis=1), atol=1e-13)


gate_strategy = st.tuples(
    st.sampled_from(list(GateKind)),
    st.floats(0, 2 * math.pi, allow_nan=False),
    st.permutations(range(6)),
)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.lists(gate_strategy, min_size=50, max_size=50))
def test_norm_preserved_over_random_sequences(n, gates):
    if n == 1:
        gates = [g for g in gates if g[0].arity == 1]
    psi = zero_batch(n, 1)
    for kind, theta, perm in gates:
        qubits = [q for q in perm if q < n][: kind.arity]
        psi = apply_batch(psi, kind, qubits, theta if kind.parameterized else None)
    assert abs(np.vdot(psi[0], psi[0]).real - 1.0) <= 1e-9


# -- noise --------------------------------------------------------------


def test_sample_error_edges():
    rng = np.random.default_rng(0)
    assert all(sample_error(NoiseSpec(NoiseKind.DEPOLARIZING, 0.0), rng) is None for _ in range(1000))
    assert all(sample_error(NoiseSpec(NoiseKind.BITFLIP, 1.0), rng) is Pauli.X for _ in range(1000))
    assert all(sample_error(NoiseSpec(NoiseKind.PHASEFLIP, 1.0), rng) is Pauli.Z for _ in range(100))
    with pytest.raises(ValueError):
        NoiseSpec(NoiseKind.BITFLIP, 1.5)


def test_depolarizing_frequencies():
    rng = np.random.default_rng(7)
    n, p = 10**5, 0.1
    draws = [sample_error(NoiseSpec(NoiseKind.DEPOLARIZING, p), rng) for _ in range(n)]
    errors = [d for d in draws if d is not None]
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(len(errors) / n - p) <= 3 * sigma
    m = len(errors)
    for pauli in Pauli:
        frac = sum(e is pauli for e in errors) / m
        assert abs(frac - 1 / 3) <= 3 * math.sqrt((2 / 9) / m)


def test_vectorised_codes_frequencies():
    rng = np.random.default_rng(8)
    codes = sample_error_codes(NoiseSpec(NoiseKind.DEPOLARIZING, 0.3), rng, 10**5)
    assert abs(np.mean(codes > 0) - 0.3) <= 3 * math.sqrt(0.21 / 10**5)
    assert set(np.unique(codes)) == {0, 1, 2, 3}


def test_noiseless_trajectory_is_bit_exact(rng):
    circ = Circuit(3, [
        GateInstance(GateKind.RX, (0,), 0.4), GateInstance(GateKind.XX, (0, 2), 1.1),
        GateInstance(GateKind.CRZ, (2, 1), 0.9), GateInstance(GateKind.ISWAP, (1, 0)),
    ])
    init = Statevector(3, random_state(3, rng))
    for kind in NoiseKind:
        noisy = run_noisy_trajectory(circ, init, NoiseSpec(kind, 0.0), rng)
        assert np.array_equal(noisy.amplitudes, run_circuit(circ, init).amplitudes)


@pytest.mark.parametrize("p", [0.05, 0.08, 0.10])
@pytest.mark.parametrize("kind,factor", [
    (NoiseKind.BITFLIP, lambda p: 1 - 2 * p),
    (NoiseKind.DEPOLARIZING, lambda p: 1 - 4 * p / 3),
    (NoiseKind.PHASEFLIP, lambda p: 1.0),
])
def test_channel_means_single_rx(kind, factor, p):
    theta = 0.8
    rng = np.random.default_rng(int(p * 1000))
    psi = run_noisy_batch(zero_batch(1, 10**4), [(GateKind.RX, (0,), theta)], NoiseSpec(kind, p), rng)
    z = mean_z_batch(psi)
    se = z.std(ddof=1) / math.sqrt(len(z))
    assert abs(z.mean() - factor(p) * math.cos(theta)) <= 3 * max(se, 1e-12)


def test_trajectory_api_agrees_with_batch_api():
    circ = Circuit(1, [GateInstance(GateKind.RX, (0,), 1.2)])
    rng = np.random.default_rng(11)
    vals = [expectation_z(run_noisy_trajectory(circ, Statevector.zero(1),
                                               NoiseSpec(NoiseKind.BITFLIP, 0.1), rng), 0)
            for _ in range(4000)]
    mean = np.mean(vals)
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(mean - 0.8 * math.cos(1.2)) <= 4 * se
