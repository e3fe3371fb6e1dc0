import numpy as np
import pytest

from decoupler import circuit as qc
from decoupler import cost, grad
from decoupler.circuit import DoubledBinding
from decoupler.cost import Partition
from decoupler.statekit import PAULI, basis_state, haar_random_unitary

BI = Partition.bipartition(2)


def cd_value(w, part):
    ev = grad.ExactEvaluator()
    return lambda p: ev(w, part, [DoubledBinding(p)])[0].value


def random_sandwich(n, rng):
    layers = int(rng.integers(1, 3))
    v0 = qc.universal_two_qubit_ansatz() if n == 2 else qc.layered_ansatz(n, layers)
    v1 = qc.layered_ansatz(n, 1) if rng.random() < 0.5 else qc.Circuit(n)
    return qc.sandwich(haar_random_unitary(n, rng), v0, v1)


def test_global_phase_parameter_has_zero_partial():
    # RZ on |0>-only qubit is a phase on that qubit; acting alone it creates no entanglement
    w = qc.Circuit(2, [qc.GateOp("PauliRotation", (0,), "Z", 0)], 1)
    g = grad.shift_rule_gradient_cd(w, [0.7], BI, grad.ExactEvaluator())
    assert abs(g[0]) < 1e-10


def test_zero_gradient_at_identity():
    # CNOT RZ(t) CNOT is a ZZ rotation: the identity at t = 0, entangling elsewhere
    w = qc.Circuit(
        2,
        [
            qc.GateOp("PauliRotation", (0,), "Y", 0),
            qc.GateOp("CNOT", (0, 1)),
            qc.GateOp("PauliRotation", (1,), "Z", 1),
            qc.GateOp("CNOT", (0, 1)),
        ],
        2,
    )
    g = grad.shift_rule_gradient_cd(w, np.zeros(2), BI, grad.ExactEvaluator())
    assert np.max(np.abs(g)) < 1e-10
    g = grad.shift_rule_gradient_cd(w, [0.4, 0.3], BI, grad.ExactEvaluator())
    assert abs(g[1]) > 1e-3


def test_shift_rule_matches_fd(rng):
    for n, part in ((2, BI), (4, Partition.bipartition(4)), (4, Partition.singletons(4))):
        w = random_sandwich(n, rng)
        p = rng.uniform(-np.pi, np.pi, w.num_params)
        g = grad.shift_rule_gradient_cd(w, p, part, grad.ExactEvaluator())
        fd = grad.finite_difference_gradient(cd_value(w, part), p, h=1e-5)
        assert np.max(np.abs(g - fd)) < 1e-6


def test_literal_and_fast_evaluators_agree(rng):
    w = random_sandwich(2, rng)
    p = rng.uniform(-np.pi, np.pi, w.num_params)
    fast = grad.shift_rule_gradient_cd(w, p, BI, grad.ExactEvaluator(), indices=range(6))
    lit = grad.shift_rule_gradient_cd(w, p, BI, grad.LiteralEvaluator(), indices=range(6))
    assert np.max(np.abs(fast - lit)) < 1e-12
    assert np.all(fast[6:] == 0)


def test_four_evaluations_per_parameter(rng):
    w = random_sandwich(2, rng)
    ev = grad.ExactEvaluator()
    grad.shift_rule_gradient_cd(w, np.zeros(w.num_params), BI, ev)
    assert ev.calls == 4 * w.num_params
    obj = grad.UnitaryCost("lhst", haar_random_unitary(2, rng), qc.universal_two_qubit_ansatz())
    grad.shift_rule_gradient_expectation(obj, obj.circuit, np.zeros(15))
    assert obj.calls == 2 * 15


def test_linearity(rng):
    w = random_sandwich(2, rng)
    p = rng.uniform(-np.pi, np.pi, w.num_params)
    g = grad.shift_rule_gradient_cd(w, p, BI, grad.ExactEvaluator())

    class Scaled:
        def __init__(self):
            self.inner = grad.ExactEvaluator()

        def __call__(self, w, part, bindings):
            return [cost.CostEstimate(2.5 * r.value) for r in self.inner(w, part, bindings)]

    g2 = grad.shift_rule_gradient_cd(w, p, BI, Scaled())
    assert np.max(np.abs(g2 - 2.5 * g)) < 1e-10


def test_sampled_gradient_converges(rng):
    w = qc.sandwich(haar_random_unitary(2, rng), qc.layered_ansatz(2, 1), qc.Circuit(2))
    p = rng.uniform(-np.pi, np.pi, w.num_params)
    idx = [0, 4, 7]
    exact = grad.shift_rule_gradient_cd(w, p, BI, grad.ExactEvaluator(), indices=idx)
    sampled, std = grad.shift_rule_gradient_cd(
        w, p, BI, grad.SampledEvaluator(100000, np.random.default_rng(3)), indices=idx, return_std=True
    )
    assert np.all(np.abs(sampled[idx] - exact[idx]) <= 4 * std[idx])


def test_expectation_rule_examples():
    c = qc.Circuit(1, [qc.GateOp("PauliRotation", (0,), "X", 0)], 1)
    obj = grad.ObservableExpectation(c, PAULI["Z"], basis_state([0]))
    assert obj([0.3]) == pytest.approx(np.cos(0.3))
    assert grad.shift_rule_gradient_expectation(obj, c, [np.pi / 2])[0] == pytest.approx(-1.0, abs=1e-12)
    assert grad.shift_rule_gradient_expectation(obj, c, [0.0])[0] == pytest.approx(0.0, abs=1e-12)


def test_expectation_rule_matches_fd_for_local_costs(rng):
    for kind in ("lhst", "hst"):
        a = qc.layered_ansatz(3, 2)
        obj = grad.UnitaryCost(kind, haar_random_unitary(3, rng), a)
        p = rng.uniform(-np.pi, np.pi, a.num_params)
        g = grad.shift_rule_gradient_expectation(obj, a, p)
        fd = grad.finite_difference_gradient(obj, p)
        assert np.max(np.abs(g - fd)) < 1e-6


def test_unsupported_objective():
    with pytest.raises(grad.UnsupportedObjectiveError):
        grad.shift_rule_gradient_expectation(lambda p: float(np.sum(p)), qc.Circuit(1), [])


def test_finite_difference_examples():
    g = grad.finite_difference_gradient(lambda p: float(np.sum(p)), np.zeros(4))
    assert np.allclose(g, 1.0, atol=1e-10)
    g = grad.finite_difference_gradient(lambda p: float(p[0] ** 2), [3.0], h=1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-8)
    with pytest.raises(ValueError):
        grad.finite_difference_gradient(lambda p: 0.0, [0.0], h=0)
