"""Divide-and-conquer compilation: staged decoupling, local fine-tuning and the direct baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import circuit as qc
from . import cost, grad
from .circuit import Circuit, DoubledBinding
from .cost import Partition
from .optimize import AdamConfig, TrainingTrace, train_phase
from .statekit import num_qubits_of

OBJECTIVES = ("CD", "LHST", "HST")
# local phases run to patience or max_iters; the decoupling threshold would stop them far too early
FINAL_PHASE_THRESHOLD = 1e-10


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Phase:
    name: str
    objective: str
    trainable: tuple[str, ...]
    partition: Partition | None = None
    adam: AdamConfig = AdamConfig()

    def __post_init__(self):
        object.__setattr__(self, "trainable", tuple(self.trainable))
        if self.objective not in OBJECTIVES:
            raise PlanError(f"unknown objective {self.objective!r}")
        if self.objective == "CD" and self.partition is None:
            raise PlanError(f"phase {self.name!r}: a CD phase needs a partition")


@dataclass(frozen=True)
class DecouplingPlan:
    """Ansatz blocks arranged as nested pre/post levels around a middle column.

    ``blocks`` maps names to circuits on the full register with their own
    parameters 0..k-1; the global vector concatenates them in order. ``pre``
    and ``post`` list levels from the outermost (V0, V1) inwards. The
    assembled candidate applies pre levels outer to inner, the middle, then
    post levels inner to outer.
    """

    num_qubits: int
    blocks: tuple[tuple[str, Circuit], ...]
    pre: tuple[tuple[str, ...], ...]
    middle: tuple[str, ...]
    post: tuple[tuple[str, ...], ...]
    phases: tuple[Phase, ...]
    joint_final: bool = False

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((str(k), c) for k, c in self.blocks))
        object.__setattr__(self, "pre", tuple(tuple(level) for level in self.pre))
        object.__setattr__(self, "middle", tuple(self.middle))
        object.__setattr__(self, "post", tuple(tuple(level) for level in self.post))
        object.__setattr__(self, "phases", tuple(self.phases))
        names = [k for k, _ in self.blocks]
        if len(set(names)) != len(names):
            raise PlanError("block names must be unique")
        for name, c in self.blocks:
            if c.num_qubits != self.num_qubits:
                raise PlanError(f"block {name!r} is not on the full {self.num_qubits}-qubit register")
        placed = [b for level in self.pre + self.post for b in level] + list(self.middle)
        if sorted(placed) != sorted(names):
            raise PlanError("every block must appear exactly once in pre, middle or post")
        if not self.phases:
            raise PlanError("plan has no phases")
        for ph in self.phases:
            missing = set(ph.trainable) - set(names)
            if missing:
                raise PlanError(f"phase {ph.name!r} trains unknown blocks {sorted(missing)}")
            if ph.partition is not None and ph.partition.num_qubits != self.num_qubits:
                raise PlanError(f"phase {ph.name!r} partition width differs from the plan")
        if self.phases[-1].objective == "CD":
            raise PlanError("the final phase must optimize LHST or HST")
        cd = [ph for ph in self.phases if ph.objective == "CD"]
        if any(ph.objective != "CD" for ph in self.phases[: len(cd)]):
            raise PlanError("decoupling phases must precede the local phases")
        for earlier, later in zip(cd, cd[1:]):
            if not later.partition.refines(earlier.partition):
                raise PlanError(f"partition of {later.name!r} does not refine {earlier.name!r}")

    @property
    def block_map(self) -> dict[str, Circuit]:
        return dict(self.blocks)

    @property
    def offsets(self) -> dict[str, int]:
        out, k = {}, 0
        for name, c in self.blocks:
            out[name] = k
            k += c.num_params
        return out

    @property
    def num_params(self) -> int:
        return sum(c.num_params for _, c in self.blocks)

    def block_indices(self, name: str) -> list[int]:
        start = self.offsets[name]
        return list(range(start, start + self.block_map[name].num_params))

    def trainable_indices(self, phase: Phase) -> list[int]:
        if phase is self.phases[-1] and self.joint_final:
            return list(range(self.num_params))
        return sorted(i for name in phase.trainable for i in self.block_indices(name))

    def _global(self, name: str) -> Circuit:
        n = self.num_qubits
        return qc.embed(self.block_map[name], range(n), n, self.offsets[name], self.num_params)

    def _level_circuits(self, levels) -> list[Circuit]:
        return [self._global(b) for level in levels for b in level]

    def assembled_circuit(self) -> Circuit:
        parts = self._level_circuits(self.pre)
        parts += [self._global(b) for b in self.middle]
        parts += self._level_circuits(reversed(self.post))
        if not parts:
            return Circuit(self.num_qubits, (), self.num_params)
        return qc.compose(*parts)

    def depth_of(self, phase: Phase) -> int:
        """Innermost pre/post level touched by the phase's trainable blocks."""
        depth = -1
        for stack in (self.pre, self.post):
            for d, level in enumerate(stack):
                if set(level) & set(phase.trainable):
                    depth = max(depth, d)
        if depth < 0:
            raise PlanError(f"phase {phase.name!r} trains no pre/post block")
        return depth

    def decoupling_circuit(self, target, depth: int) -> Circuit:
        """W = (post levels 0..depth)^dag U (pre levels 0..depth)^dag over the global vector."""
        target = np.asarray(target, dtype=complex)
        n = self.num_qubits
        pre = [qc.inverse(c) for c in reversed(self._level_circuits(self.pre[: depth + 1]))]
        post = [qc.inverse(c) for c in self._level_circuits(self.post[: depth + 1])]
        middle = Circuit(n, [qc.GateOp("ConstantUnitary", range(n), matrix=target)], self.num_params)
        return qc.compose(*pre, middle, *post)


def _phase_adam(adam: AdamConfig | None, final: bool) -> AdamConfig:
    base = adam if adam is not None else AdamConfig()
    return base.updated(cost_threshold=FINAL_PHASE_THRESHOLD) if final else base


def default_plan_2q(adam: AdamConfig | None = None, final_objective: str = "LHST") -> DecouplingPlan:
    """Universal V0, empty V1; decouple {0}|{1}, then tune all 15 angles on the local cost."""
    blocks = (("V0", qc.universal_two_qubit_ansatz()),)
    phases = (
        Phase("decouple", "CD", ("V0",), Partition(((0,), (1,))), _phase_adam(adam, False)),
        Phase("local", final_objective, ("V0",), None, _phase_adam(adam, True)),
    )
    return DecouplingPlan(2, blocks, (("V0",),), (), (), phases)


def default_plan_4q(
    layers_outer: int = 4,
    layers_inner: int = 2,
    adam: AdamConfig | None = None,
    final_objective: str = "LHST",
    joint_final: bool = False,
) -> DecouplingPlan:
    n = 4
    outer = qc.layered_ansatz(4, layers_outer)
    inner = qc.layered_ansatz(2, layers_inner)
    blocks = [("V0", outer), ("V1", outer)]
    for name, qubits in (("VA0", (0, 1)), ("VB0", (2, 3)), ("VA1", (0, 1)), ("VB1", (2, 3))):
        blocks.append((name, qc.embed(inner, qubits, n)))
    blocks.append(("middle", qc.single_qubit_column(n)))
    phases = (
        Phase("decouple_halves", "CD", ("V0", "V1"), Partition.bipartition(4), _phase_adam(adam, False)),
        Phase(
            "decouple_qubits",
            "CD",
            ("VA0", "VB0", "VA1", "VB1"),
            Partition.singletons(4),
            _phase_adam(adam, False),
        ),
        Phase("local", final_objective, ("middle",), None, _phase_adam(adam, True)),
    )
    return DecouplingPlan(
        n,
        tuple(blocks),
        (("V0",), ("VA0", "VB0")),
        ("middle",),
        (("V1",), ("VA1", "VB1")),
        phases,
        joint_final,
    )


@dataclass(frozen=True)
class PhaseSummary:
    name: str
    iterations: int
    stop_reason: str


@dataclass
class CompiledResult:
    final_circuit: Circuit
    final_params: np.ndarray
    fidelity: float
    hst: float
    trace: TrainingTrace
    phases: list[PhaseSummary]
    seed: int
    ansatz: Circuit | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fidelity": self.fidelity,
            "hst": self.hst,
            "phases": [
                {"name": p.name, "iterations": p.iterations, "stop_reason": p.stop_reason} for p in self.phases
            ],
            "circuit": qc.circuit_to_dict(self.final_circuit),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def initial_params(count: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-np.pi, np.pi, count)


def _make_evaluator(evaluator, seed: int):
    if evaluator is None or evaluator == "exact":
        return grad.ExactEvaluator()
    if isinstance(evaluator, str):
        raise ValueError(f"unknown evaluator {evaluator!r}")
    if isinstance(evaluator, int):
        # a bare integer asks for shot sampling with that many shots per evaluation
        return grad.SampledEvaluator(evaluator, np.random.default_rng([seed, 1]))
    return evaluator


def _diagnostic(assembled: Circuit, target):
    def fn(params):
        u = qc.to_unitary(assembled, params)
        return cost.gate_fidelity(u, target), cost.hst_cost(u, target)

    return fn


def _finish(assembled: Circuit, params, target, trace, summaries, seed) -> CompiledResult:
    u = qc.to_unitary(assembled, params)
    return CompiledResult(
        final_circuit=qc.bind(assembled, params),
        final_params=params,
        fidelity=cost.gate_fidelity(u, target),
        hst=cost.hst_cost(u, target),
        trace=trace,
        phases=summaries,
        seed=seed,
        ansatz=assembled,
    )


def _check_target(target, n: int) -> np.ndarray:
    target = np.asarray(target, dtype=complex)
    if target.ndim != 2 or target.shape[0] != target.shape[1] or num_qubits_of(target.shape[0]) != n:
        raise PlanError(f"target of shape {target.shape} does not match a {n}-qubit plan")
    return target


def run_decoupling(target, plan: DecouplingPlan, seed: int, evaluator=None, init=None) -> CompiledResult:
    """Train the plan's phases in order and return the assembled, bound circuit."""
    target = _check_target(target, plan.num_qubits)
    ev = _make_evaluator(evaluator, seed)
    params = initial_params(plan.num_params, seed) if init is None else np.array(init, dtype=float)
    if params.size != plan.num_params:
        raise PlanError(f"expected {plan.num_params} initial parameters, got {params.size}")
    assembled = plan.assembled_circuit()
    diagnostic = _diagnostic(assembled, target)
    trace = TrainingTrace()
    summaries = []
    for phase in plan.phases:
        idx = plan.trainable_indices(phase)
        frozen = np.setdiff1d(np.arange(plan.num_params), idx)
        before = params[frozen].copy()
        if phase.objective == "CD":
            w = plan.decoupling_circuit(target, plan.depth_of(phase))
            part = phase.partition

            def value_fn(p, w=w, part=part):
                return ev(w, part, [DoubledBinding(p)])[0].value

            def grad_fn(p, w=w, part=part, idx=idx):
                return grad.shift_rule_gradient_cd(w, p, part, ev, indices=idx)

        else:
            objective = grad.UnitaryCost(phase.objective.lower(), target, assembled)
            value_fn = objective

            def grad_fn(p, objective=objective, idx=idx):
                return grad.shift_rule_gradient_expectation(objective, assembled, p, indices=idx)

        start = len(trace)
        params, reason = train_phase(value_fn, grad_fn, params, phase.adam, trace, phase.name, idx, diagnostic)
        if not np.array_equal(params[frozen], before):
            raise AssertionError(f"frozen parameters moved during phase {phase.name!r}")
        summaries.append(PhaseSummary(phase.name, len(trace) - start, reason))
    return _finish(assembled, params, target, trace, summaries, seed)


def run_direct_baseline(
    target,
    ansatz: Circuit,
    objective: str = "HST",
    adam: AdamConfig | None = None,
    seed: int = 0,
    init=None,
) -> CompiledResult:
    """Optimize the HST or LHST cost over every ansatz parameter in one phase."""
    if objective not in ("HST", "LHST"):
        raise PlanError(f"direct baseline objective must be HST or LHST, not {objective!r}")
    target = _check_target(target, ansatz.num_qubits)
    cfg = _phase_adam(adam, True)
    params = initial_params(ansatz.num_params, seed) if init is None else np.array(init, dtype=float)
    obj = grad.UnitaryCost(objective.lower(), target, ansatz)
    trace = TrainingTrace()
    name = f"direct_{objective.lower()}"
    params, reason = train_phase(
        obj,
        lambda p: grad.shift_rule_gradient_expectation(obj, ansatz, p),
        params,
        cfg,
        trace,
        name,
        None,
        _diagnostic(ansatz, target),
    )
    return _finish(ansatz, params, target, trace, [PhaseSummary(name, len(trace), reason)], seed)


def spindle_target(seed: int) -> np.ndarray:
    """Unitary of a one-layer instance of the 4-qubit plan's ansatz at random angles."""
    plan = default_plan_4q(layers_outer=1, layers_inner=1)
    params = np.random.default_rng([seed, 7]).uniform(-np.pi, np.pi, plan.num_params)
    return qc.to_unitary(plan.assembled_circuit(), params)


def total_budget(plan: DecouplingPlan) -> int:
    return sum(ph.adam.max_iters for ph in plan.phases)


def median_fidelity(results: Sequence[CompiledResult]) -> float:
    return float(np.median([r.fidelity for r in results]))
