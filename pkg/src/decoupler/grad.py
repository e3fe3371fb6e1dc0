"""Parameter-shift and finite-difference gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import circuit as qc
from . import cost
from .circuit import Circuit, DoubledBinding
from .cost import CostEstimate, Partition

SHIFT = np.pi / 2


class UnsupportedObjectiveError(TypeError):
    """The objective is not an expectation value after the parameterized circuit."""


class ExactEvaluator:
    """Exact C_D for a batch of doubled bindings.

    Bindings that share one base vector are evaluated together: the shifted
    unitaries come from cached prefix/suffix products and every distinct
    unitary's Choi Gram matrices are computed once.
    """

    def __init__(self):
        self.calls = 0

    def __call__(self, w: Circuit, partition: Partition, bindings: Sequence[DoubledBinding]) -> list[CostEstimate]:
        bindings = list(bindings)
        self.calls += len(bindings)
        if not bindings:
            return []
        base = bindings[0].base
        if any(not np.array_equal(b.base, base) for b in bindings):
            return [self._single(w, partition, b) for b in bindings]
        shifts, slot_of, slots = [], {}, []
        for b in bindings:
            if b.shift_copy == "none" or b.shift_amount == 0.0:
                slots.append(None)
                continue
            key = (b.shift_index, b.shift_amount)
            if key not in slot_of:
                slot_of[key] = len(shifts)
                shifts.append(key)
            slots.append(slot_of[key])
        u0, stack = qc.shifted_unitaries(w, base, shifts)
        # C_D is symmetric under exchanging the copies, so a shift in either
        # copy pairs the shifted unitary with the base one
        unique = np.concatenate([u0[None], stack])
        swaps = cost.swap_expectations_against(unique, u0, partition)
        values = cost._finish_exact(partition, swaps)
        return [CostEstimate(float(values[0 if s is None else s + 1])) for s in slots]

    def _single(self, w, partition, binding):
        a, b = binding.copy_params()
        value = cost.decoupling_cost_unitaries(qc.to_unitary(w, a), qc.to_unitary(w, b), partition)
        return CostEstimate(float(value))


class LiteralEvaluator:
    """Exact C_D through the explicit doubled-register density matrix; slow, for cross-checks."""

    def __init__(self):
        self.calls = 0

    def __call__(self, w, partition, bindings):
        bindings = list(bindings)
        self.calls += len(bindings)
        return [cost.decoupling_cost_exact(w, b, partition) for b in bindings]


class SampledEvaluator:
    """Shot-sampled C_D; each binding draws ``shots`` fresh shots from ``rng``."""

    def __init__(self, shots: int, rng: np.random.Generator):
        if shots < 1:
            raise ValueError("shots must be at least 1")
        self.shots = shots
        self.rng = rng
        self.calls = 0

    def __call__(self, w, partition, bindings):
        bindings = list(bindings)
        self.calls += len(bindings)
        return [cost.decoupling_cost_sampled(w, b, partition, self.shots, self.rng) for b in bindings]


def _indices(num_params: int, indices) -> list[int]:
    return list(range(num_params)) if indices is None else [int(i) for i in indices]


def shift_rule_gradient_cd(
    w: Circuit,
    params,
    partition: Partition,
    evaluator,
    indices=None,
    return_std: bool = False,
):
    """Gradient of C_D with each parameter shifted by +/-pi/2 in one copy at a time.

    Four evaluations per requested parameter. Entries outside ``indices`` are
    left at zero. With ``return_std`` the propagated standard errors are
    returned as a second array.
    """
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.size != w.num_params:
        raise qc.CircuitError(f"expected {w.num_params} parameters, got {params.size}")
    idx = _indices(w.num_params, indices)
    bindings = []
    for i in idx:
        for copy in ("alpha", "beta"):
            bindings.append(DoubledBinding(params, copy, i, SHIFT))
            bindings.append(DoubledBinding(params, copy, i, -SHIFT))
    results = evaluator(w, partition, bindings)
    values = np.array([r.value for r in results]).reshape(len(idx), 4)
    errors = np.array([r.std_error for r in results]).reshape(len(idx), 4)
    grad = np.zeros(w.num_params)
    std = np.zeros(w.num_params)
    grad[idx] = 0.5 * (values[:, 0] - values[:, 1] + values[:, 2] - values[:, 3])
    std[idx] = 0.5 * np.sqrt(np.sum(errors**2, axis=1))
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite decoupling-cost gradient")
    return (grad, std) if return_std else grad


class ObservableExpectation:
    """<psi| C(theta)^dag A C(theta) |psi> for a fixed observable and input state."""

    expectation_form = True

    def __init__(self, circuit: Circuit, observable, state):
        self.circuit = circuit
        self.observable = np.asarray(observable, dtype=complex)
        self.state = np.asarray(state, dtype=complex).reshape(-1)
        self.calls = 0

    def _expect(self, unitaries):
        psi = unitaries @ self.state
        return np.einsum("ni,ij,nj->n", psi.conj(), self.observable, psi).real

    def __call__(self, params) -> float:
        self.calls += 1
        return float(self._expect(qc.to_unitary(self.circuit, params)[None])[0])

    def shifted_values(self, params, shifts) -> np.ndarray:
        self.calls += len(shifts)
        _, stack = qc.shifted_unitaries(self.circuit, params, shifts)
        return self._expect(stack)


class UnitaryCost:
    """HST or LHST cost between a parameterized circuit and a fixed target.

    Both are projector expectations in the Choi state of target^dag C(theta),
    so the two-term shift rule applies.
    """

    expectation_form = True

    def __init__(self, kind: str, target, circuit: Circuit):
        if kind not in ("hst", "lhst"):
            raise ValueError(f"unknown unitary cost {kind!r}")
        self.kind = kind
        self.target = np.asarray(target, dtype=complex)
        self.circuit = circuit
        self.calls = 0

    def _batch(self, stack):
        if self.kind == "hst":
            return cost.hst_costs(self.target, stack)
        return cost.lhst_costs(self.target, stack)

    def __call__(self, params) -> float:
        self.calls += 1
        return float(self._batch(qc.to_unitary(self.circuit, params)[None])[0])

    def shifted_values(self, params, shifts) -> np.ndarray:
        self.calls += len(shifts)
        _, stack = qc.shifted_unitaries(self.circuit, params, shifts)
        return self._batch(stack)


def shift_rule_gradient_expectation(objective, circuit: Circuit, params, indices=None) -> np.ndarray:
    """Two-term shift rule; ``objective`` must expose ``shifted_values`` and ``expectation_form``."""
    if not getattr(objective, "expectation_form", False) or not hasattr(objective, "shifted_values"):
        raise UnsupportedObjectiveError(
            f"{type(objective).__name__} is not an expectation-valued objective"
        )
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.size != circuit.num_params:
        raise qc.CircuitError(f"expected {circuit.num_params} parameters, got {params.size}")
    idx = _indices(circuit.num_params, indices)
    shifts = [(i, s) for i in idx for s in (SHIFT, -SHIFT)]
    values = np.asarray(objective.shifted_values(params, shifts)).reshape(len(idx), 2)
    grad = np.zeros(circuit.num_params)
    grad[idx] = 0.5 * (values[:, 0] - values[:, 1])
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite expectation gradient")
    return grad


def finite_difference_gradient(objective: Callable, params, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences (f(x + h) - f(x - h)) / 2h per coordinate."""
    if h <= 0:
        raise ValueError("step h must be positive")
    params = np.asarray(params, dtype=float).reshape(-1)
    grad = np.zeros(params.size)
    for i in _indices(params.size, indices):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (float(objective(up)) - float(objective(down))) / (2 * h)
    return grad
