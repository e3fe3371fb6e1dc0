import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupler import circuit as qc
from decoupler.statekit import basis_state, haar_random_state, haar_random_unitary, is_unitary, outer, purity

CNOT = qc.FIXED_GATES["CNOT"]


def rx_circuit():
    return qc.Circuit(1, [qc.GateOp("PauliRotation", (0,), "X", 0)], 1)


def test_apply_examples():
    psi = haar_random_state(2, np.random.default_rng(0))
    assert np.allclose(qc.apply(qc.Circuit(2), (), psi), psi)
    assert np.allclose(qc.apply(rx_circuit(), [np.pi], basis_state([0])), [0, -1j])
    c = qc.Circuit(2, [qc.GateOp("CNOT", (0, 1))])
    assert np.allclose(qc.apply(c, (), basis_state([1, 0])), basis_state([1, 1]))


def test_to_unitary_examples(rng):
    assert np.allclose(qc.to_unitary(qc.Circuit(3)), np.eye(8))
    c = qc.Circuit(2, [qc.GateOp("CNOT", (0, 1))])
    assert np.array_equal(qc.to_unitary(c).real, [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    a = qc.layered_ansatz(3, 2)
    p = rng.uniform(-np.pi, np.pi, a.num_params)
    psi = haar_random_state(3, rng)
    assert np.allclose(qc.apply(a, p, psi), qc.to_unitary(a, p) @ psi, atol=1e-12)


def test_reversed_cnot_and_qubit_order():
    c = qc.Circuit(2, [qc.GateOp("CNOT", (1, 0))])
    assert np.allclose(qc.apply(c, (), basis_state([0, 1])), basis_state([1, 1]))
    c = qc.Circuit(3, [qc.GateOp("X", (2,))])
    assert np.allclose(qc.apply(c, (), basis_state([0, 0, 0])), basis_state([0, 0, 1]))


def test_apply_density(rng):
    a = qc.universal_two_qubit_ansatz()
    p = rng.uniform(-np.pi, np.pi, 15)
    rho = outer(haar_random_state(2, rng))
    assert np.allclose(qc.apply_density(qc.Circuit(2, (), 15), p, rho), rho)
    out = qc.apply_density(a, p, rho)
    assert abs(purity(out) - 1) < 1e-12
    psi = qc.apply(a, p, haar_random_state(2, np.random.default_rng(3)))
    ref = qc.apply_density(a, p, outer(haar_random_state(2, np.random.default_rng(3))))
    assert np.allclose(outer(psi), ref, atol=1e-12)


def test_dagger(rng):
    a = qc.layered_ansatz(2, 2)
    p = rng.uniform(-np.pi, np.pi, a.num_params)
    d = qc.dagger(a, p)
    assert d.num_params == 0
    assert np.allclose(qc.to_unitary(d) @ qc.to_unitary(a, p), np.eye(4), atol=1e-10)
    dd = qc.dagger(d, ())
    assert np.allclose(qc.to_unitary(dd), qc.to_unitary(a, p), atol=1e-12)
    c = qc.Circuit(2, [qc.GateOp("CNOT", (0, 1))])
    assert np.allclose(qc.to_unitary(qc.dagger(c, ())), CNOT)


def test_parameterized_inverse(rng):
    a = qc.layered_ansatz(3, 1)
    p = rng.uniform(-np.pi, np.pi, a.num_params)
    assert np.allclose(qc.to_unitary(qc.inverse(a), p), qc.to_unitary(a, p).conj().T, atol=1e-12)


def test_universal_ansatz():
    a = qc.universal_two_qubit_ansatz()
    assert a.num_params == 15
    assert sum(g.kind == "CNOT" for g in a.gates) == 3
    u = qc.to_unitary(a, np.zeros(15))
    assert is_unitary(u, 1e-10)
    assert np.allclose(np.abs(u), np.round(np.abs(u)))  # a CNOT-only permutation


def test_universal_ansatz_reaches_haar_targets():
    # universality smoke test; the full 100-target sweep lives in the acceptance-style slow tests
    from decoupler import decouple
    from decoupler.optimize import AdamConfig

    fails = 0
    for k in range(5):
        target = haar_random_unitary(2, np.random.default_rng(100 + k))
        r = decouple.run_direct_baseline(target, qc.universal_two_qubit_ansatz(), "HST", AdamConfig(max_iters=3000), seed=k)
        fails += r.hst >= 1e-3
    assert fails == 0


def test_layered_ansatz_counts():
    assert qc.layered_ansatz(4, 4).num_params == 60
    assert qc.layered_ansatz(2, 1).num_params == 12
    a = qc.layered_ansatz(3, 2)
    assert is_unitary(qc.to_unitary(a, np.zeros(a.num_params)), 1e-10)
    with pytest.raises(qc.CircuitError):
        qc.layered_ansatz(1, 1)


def test_sandwich(rng):
    u = haar_random_unitary(2, rng)
    empty = qc.Circuit(2)
    assert np.allclose(qc.to_unitary(qc.sandwich(u, empty, empty)), u, atol=1e-12)
    assert np.allclose(qc.to_unitary(qc.sandwich(np.eye(4), empty, empty)), np.eye(4))
    v0, v1 = qc.universal_two_qubit_ansatz(), qc.layered_ansatz(2, 1)
    w = qc.sandwich(u, v0, v1)
    assert w.num_params == 27
    p = rng.uniform(-np.pi, np.pi, 27)
    ref = qc.to_unitary(v1, p[15:]).conj().T @ u @ qc.to_unitary(v0, p[:15]).conj().T
    assert np.allclose(qc.to_unitary(w, p), ref, atol=1e-12)
    with pytest.raises(qc.CircuitError):
        qc.sandwich(u, qc.Circuit(3), empty)


def test_doubled_circuit(rng):
    w = qc.sandwich(haar_random_unitary(2, rng), qc.universal_two_qubit_ansatz(), qc.Circuit(2))
    d = qc.doubled_circuit(w)
    p = rng.uniform(-np.pi, np.pi, w.num_params)
    u = qc.to_unitary(w, p)
    shared = qc.DoubledBinding(p)
    assert np.allclose(qc.to_unitary(d, shared.doubled_params()), np.kron(u, u), atol=1e-12)
    zero = qc.DoubledBinding(p, "alpha", 3, 0.0)
    assert np.array_equal(zero.doubled_params(), shared.doubled_params())
    b = qc.DoubledBinding(p, "alpha", 3, np.pi / 2)
    a_params, b_params = b.copy_params()
    assert np.array_equal(b_params, p)
    ref = np.kron(qc.to_unitary(w, a_params), u)
    assert np.allclose(qc.to_unitary(d, b.doubled_params()), ref, atol=1e-12)
    with pytest.raises(qc.CircuitError):
        qc.DoubledBinding(p, "alpha", 99, 1.0)


def test_shifted_unitaries(rng):
    a = qc.layered_ansatz(3, 2)
    p = rng.uniform(-np.pi, np.pi, a.num_params)
    shifts = [(0, 0.3), (5, -1.0), (a.num_params - 1, np.pi / 2)]
    base, stack = qc.shifted_unitaries(a, p, shifts)
    assert np.allclose(base, qc.to_unitary(a, p), atol=1e-12)
    for (i, amt), u in zip(shifts, stack):
        q = p.copy()
        q[i] += amt
        assert np.allclose(u, qc.to_unitary(a, q), atol=1e-12)


def test_validation():
    with pytest.raises(qc.CircuitError):
        qc.GateOp("CNOT", (0, 0))
    with pytest.raises(qc.CircuitError):
        qc.GateOp("PauliRotation", (0, 1), "X", 0)
    with pytest.raises(qc.CircuitError):
        qc.GateOp("PauliRotation", (0,), "W", 0)
    with pytest.raises(qc.CircuitError):
        qc.GateOp("ConstantUnitary", (0,), matrix=np.ones((2, 2)))
    with pytest.raises(qc.CircuitError):
        qc.GateOp("ConstantUnitary", (0,), matrix=np.eye(4))
    with pytest.raises(qc.CircuitError):
        qc.Circuit(2, [qc.GateOp("X", (2,))])
    g = qc.GateOp("PauliRotation", (0,), "X", 0)
    with pytest.raises(qc.CircuitError):
        qc.Circuit(1, [g, g], 1)
    with pytest.raises(qc.CircuitError):
        qc.Circuit(1, [qc.GateOp("PauliRotation", (0,), "X", 3)], 2)
    with pytest.raises(qc.CircuitError):
        qc.to_unitary(rx_circuit(), [1.0, 2.0])


def test_json_roundtrip(rng):
    u = haar_random_unitary(2, rng)
    w = qc.sandwich(u, qc.universal_two_qubit_ansatz(), qc.layered_ansatz(2, 1))
    back = qc.loads(qc.dumps(w))
    p = rng.uniform(-np.pi, np.pi, w.num_params)
    assert np.allclose(qc.to_unitary(back, p), qc.to_unitary(w, p), atol=1e-12)
    doc = json.loads(qc.dumps(w))
    assert set(doc) == {"num_qubits", "num_params", "gates"}
    with pytest.raises(qc.CircuitError):
        qc.loads('{"num_qubits": 2}')


def test_bind(rng):
    a = qc.layered_ansatz(2, 2)
    p = rng.uniform(-np.pi, np.pi, a.num_params)
    b = qc.bind(a, p)
    assert b.num_params == 0
    assert np.allclose(qc.to_unitary(b), qc.to_unitary(a, p), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_unitarity_and_periodicity(n, layers, seed):
    rng = np.random.default_rng(seed)
    a = qc.layered_ansatz(n, layers)
    p = rng.uniform(-np.pi, np.pi, a.num_params)
    u = qc.to_unitary(a, p)
    assert is_unitary(u, 1e-10)
    i = int(rng.integers(a.num_params))
    q = p.copy()
    q[i] += 4 * np.pi
    assert np.allclose(qc.to_unitary(a, q), u, atol=1e-10)
    q[i] -= 2 * np.pi
    assert np.allclose(qc.to_unitary(a, q), -u, atol=1e-10)
