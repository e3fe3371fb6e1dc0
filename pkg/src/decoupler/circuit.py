"""Gate-level circuit IR, ansatz constructors and dense simulation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .statekit import PAULI, StateError, is_unitary, num_qubits_of

FIXED_GATES = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "X": PAULI["X"],
    "Z": PAULI["Z"],
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}
for _m in FIXED_GATES.values():
    _m.setflags(write=False)

GATE_ARITY = {"H": 1, "X": 1, "Z": 1, "CNOT": 2, "SWAP": 2}
AXES = ("X", "Y", "Z")


class CircuitError(ValueError):
    pass


def rotation(axis: str, theta: float) -> np.ndarray:
    """exp(-i theta sigma_axis / 2)."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return c * PAULI["I"] - 1j * s * PAULI[axis]


@dataclass(frozen=True)
class GateOp:
    kind: str
    targets: tuple[int, ...]
    axis: str | None = None
    param_index: int | None = None
    matrix: np.ndarray | None = field(default=None, compare=False)
    # -1 marks the inverse rotation exp(+i theta sigma / 2) produced by `inverse`
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if len(set(self.targets)) != len(self.targets):
            raise CircuitError(f"repeated target in {self.targets}")
        if self.kind in GATE_ARITY:
            if len(self.targets) != GATE_ARITY[self.kind]:
                raise CircuitError(f"{self.kind} acts on {GATE_ARITY[self.kind]} qubit(s)")
        elif self.kind == "PauliRotation":
            if len(self.targets) != 1:
                raise CircuitError("PauliRotation has exactly one target")
            if self.axis not in AXES:
                raise CircuitError(f"bad rotation axis {self.axis!r}")
            if self.param_index is None or self.param_index < 0:
                raise CircuitError("PauliRotation needs a non-negative param_index")
            if self.sign not in (1, -1):
                raise CircuitError("sign must be +1 or -1")
        elif self.kind == "ConstantUnitary":
            m = np.array(self.matrix, dtype=complex)
            if m.shape != (1 << len(self.targets),) * 2:
                raise CircuitError(
                    f"matrix shape {m.shape} does not fit {len(self.targets)} target(s)"
                )
            if not is_unitary(m, 1e-10):
                raise CircuitError("ConstantUnitary matrix is not unitary")
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)
        else:
            raise CircuitError(f"unknown gate kind {self.kind!r}")

    @property
    def parameterized(self) -> bool:
        return self.kind == "PauliRotation"

    def bound_matrix(self, params) -> np.ndarray:
        if self.kind == "PauliRotation":
            return rotation(self.axis, self.sign * params[self.param_index])
        if self.kind == "ConstantUnitary":
            return self.matrix
        return FIXED_GATES[self.kind]

    def inverse(self) -> "GateOp":
        if self.kind == "PauliRotation":
            return GateOp(self.kind, self.targets, self.axis, self.param_index, sign=-self.sign)
        if self.kind == "ConstantUnitary":
            return GateOp(self.kind, self.targets, matrix=self.matrix.conj().T)
        return self

    def remapped(self, qubit_map: Sequence[int], param_offset: int = 0) -> "GateOp":
        targets = tuple(qubit_map[t] for t in self.targets)
        index = None if self.param_index is None else self.param_index + param_offset
        return GateOp(self.kind, targets, self.axis, index, self.matrix, self.sign)


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[GateOp, ...] = ()
    num_params: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.num_qubits < 1:
            raise CircuitError("circuit needs at least one qubit")
        seen = set()
        for g in self.gates:
            if max(g.targets) >= self.num_qubits or min(g.targets) < 0:
                raise CircuitError(f"gate targets {g.targets} outside {self.num_qubits} qubits")
            if g.parameterized:
                if g.param_index >= self.num_params:
                    raise CircuitError(
                        f"param_index {g.param_index} >= num_params {self.num_params}"
                    )
                if g.param_index in seen:
                    raise CircuitError(f"param_index {g.param_index} used by two gates")
                seen.add(g.param_index)

    @property
    def dim(self) -> int:
        return 1 << self.num_qubits

    def param_gate_positions(self) -> dict[int, int]:
        """Map each used parameter index to the position of the gate reading it."""
        return {g.param_index: j for j, g in enumerate(self.gates) if g.parameterized}

    def __add__(self, other: "Circuit") -> "Circuit":
        return compose(self, other)


def compose(*circuits: Circuit) -> Circuit:
    """Run circuits left to right on one register with a shared parameter space."""
    n = circuits[0].num_qubits
    if any(c.num_qubits != n for c in circuits):
        raise CircuitError("cannot compose circuits of different widths")
    gates = [g for c in circuits for g in c.gates]
    return Circuit(n, gates, max(c.num_params for c in circuits))


def embed(
    circuit: Circuit,
    qubits: Sequence[int],
    num_qubits: int,
    param_offset: int = 0,
    num_params: int | None = None,
) -> Circuit:
    """Place ``circuit`` on ``qubits`` of a wider register, shifting its parameter indices."""
    if len(qubits) != circuit.num_qubits:
        raise CircuitError("qubit map length must equal the circuit width")
    total = param_offset + circuit.num_params if num_params is None else num_params
    gates = [g.remapped(qubits, param_offset) for g in circuit.gates]
    return Circuit(num_qubits, gates, total)


def _check_params(circuit: Circuit, params) -> np.ndarray:
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.size != circuit.num_params:
        raise CircuitError(
            f"expected {circuit.num_params} parameters, got {params.size}"
        )
    return params


def _apply_matrix(block: np.ndarray, matrix: np.ndarray, targets, n: int) -> np.ndarray:
    """Apply a k-qubit ``matrix`` to ``targets`` of a ``(2**n, B)`` column block."""
    k = len(targets)
    batch = block.shape[1]
    t = block.reshape((2,) * n + (batch,))
    t = np.moveaxis(t, targets, range(k))
    shape = t.shape
    t = (matrix @ t.reshape(1 << k, -1)).reshape(shape)
    t = np.moveaxis(t, range(k), targets)
    return t.reshape(1 << n, batch)


def _run(circuit: Circuit, params: np.ndarray, block: np.ndarray) -> np.ndarray:
    n = circuit.num_qubits
    for g in circuit.gates:
        block = _apply_matrix(block, g.bound_matrix(params), g.targets, n)
    return block


def apply(circuit: Circuit, params, state) -> np.ndarray:
    params = _check_params(circuit, params)
    psi = np.asarray(state, dtype=complex).reshape(-1)
    if psi.size != circuit.dim:
        raise CircuitError(f"state has dimension {psi.size}, circuit needs {circuit.dim}")
    return _run(circuit, params, psi.reshape(-1, 1).copy()).reshape(-1)


def to_unitary(circuit: Circuit, params=()) -> np.ndarray:
    params = _check_params(circuit, params)
    return _run(circuit, params, np.eye(circuit.dim, dtype=complex))


def apply_density(circuit: Circuit, params, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (circuit.dim, circuit.dim):
        raise CircuitError(f"density has shape {rho.shape}, circuit needs {circuit.dim}")
    u = to_unitary(circuit, params)
    return u @ rho @ u.conj().T


def inverse(circuit: Circuit) -> Circuit:
    """Parameterized inverse: reversed gates, rotations keep their index with flipped sign."""
    return Circuit(circuit.num_qubits, [g.inverse() for g in reversed(circuit.gates)], circuit.num_params)


def bind(circuit: Circuit, params) -> Circuit:
    """Same gate sequence with every rotation frozen to a constant matrix."""
    params = _check_params(circuit, params)
    gates = [
        GateOp("ConstantUnitary", g.targets, matrix=g.bound_matrix(params)) if g.parameterized else g
        for g in circuit.gates
    ]
    return Circuit(circuit.num_qubits, gates, 0)


def dagger(circuit: Circuit, params) -> Circuit:
    """Bound inverse circuit with no free parameters."""
    params = _check_params(circuit, params)
    gates = []
    for g in reversed(circuit.gates):
        if g.parameterized:
            gates.append(GateOp("ConstantUnitary", g.targets, matrix=g.bound_matrix(params).conj().T))
        else:
            gates.append(g.inverse())
    return Circuit(circuit.num_qubits, gates, 0)


def constant(matrix, qubits: Sequence[int] | None = None, num_qubits: int | None = None) -> Circuit:
    matrix = np.asarray(matrix, dtype=complex)
    k = num_qubits_of(matrix.shape[0])
    qubits = list(range(k)) if qubits is None else list(qubits)
    n = k if num_qubits is None else num_qubits
    return Circuit(n, [GateOp("ConstantUnitary", qubits, matrix=matrix)], 0)


# -- ansatz constructors ----------------------------------------------------


class _Builder:
    def __init__(self, n: int):
        self.n = n
        self.gates: list[GateOp] = []
        self.count = 0

    def rot(self, axis: str, q: int):
        self.gates.append(GateOp("PauliRotation", (q,), axis, self.count))
        self.count += 1

    def euler(self, q: int):
        for axis in ("Z", "Y", "Z"):
            self.rot(axis, q)

    def fixed(self, kind: str, *targets: int):
        self.gates.append(GateOp(kind, targets))

    def build(self) -> Circuit:
        return Circuit(self.n, self.gates, self.count)


def universal_two_qubit_ansatz() -> Circuit:
    """Three-CNOT universal two-qubit circuit with 15 rotation angles."""
    b = _Builder(2)
    b.euler(0)
    b.euler(1)
    b.fixed("CNOT", 1, 0)
    b.rot("Z", 0)
    b.rot("Y", 1)
    b.fixed("CNOT", 0, 1)
    b.rot("Y", 1)
    b.fixed("CNOT", 1, 0)
    b.euler(0)
    b.euler(1)
    return b.build()


def layered_ansatz(n: int, layers: int) -> Circuit:
    """ZYZ columns interleaved with CNOT ladders; 3n(layers+1) parameters."""
    if n < 2 or layers < 1:
        raise CircuitError("layered ansatz needs n >= 2 and layers >= 1")
    b = _Builder(n)
    for _ in range(layers):
        for q in range(n):
            b.euler(q)
        for q in range(n - 1):
            b.fixed("CNOT", q, q + 1)
    for q in range(n):
        b.euler(q)
    return b.build()


def single_qubit_column(n: int) -> Circuit:
    b = _Builder(n)
    for q in range(n):
        b.euler(q)
    return b.build()


def sandwich(target, v0: Circuit, v1: Circuit) -> Circuit:
    """Circuit for V1^dag U V0^dag with parameters theta0 (+) theta1."""
    target = np.asarray(target, dtype=complex)
    n = num_qubits_of(target.shape[0])
    if v0.num_qubits != n or v1.num_qubits != n:
        raise CircuitError("target and ansatz widths differ")
    total = v0.num_params + v1.num_params
    qubits = list(range(n))
    pre = embed(inverse(v0), qubits, n, 0, total)
    post = embed(inverse(v1), qubits, n, v0.num_params, total)
    middle = Circuit(n, [GateOp("ConstantUnitary", qubits, matrix=target)], total)
    return compose(pre, middle, post)


# -- doubled register ---------------------------------------------------------


@dataclass(frozen=True)
class DoubledBinding:
    base: np.ndarray
    shift_copy: str = "none"
    shift_index: int | None = None
    shift_amount: float = 0.0

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float).reshape(-1)
        object.__setattr__(self, "base", base)
        if self.shift_copy not in ("none", "alpha", "beta"):
            raise CircuitError(f"bad shift_copy {self.shift_copy!r}")
        if self.shift_copy != "none":
            if self.shift_index is None or not 0 <= self.shift_index < base.size:
                raise CircuitError("shift_index out of range")

    def copy_params(self) -> tuple[np.ndarray, np.ndarray]:
        alpha, beta = self.base.copy(), self.base.copy()
        if self.shift_copy == "alpha":
            alpha[self.shift_index] += self.shift_amount
        elif self.shift_copy == "beta":
            beta[self.shift_index] += self.shift_amount
        return alpha, beta

    def doubled_params(self) -> np.ndarray:
        return np.concatenate(self.copy_params())


def doubled_circuit(w: Circuit) -> Circuit:
    """W on qubits 0..n-1 (copy alpha) and on n..2n-1 (copy beta).

    Copy beta reads parameters offset by ``w.num_params``; bind with
    :meth:`DoubledBinding.doubled_params` so both copies see the same vector.
    """
    n, k = w.num_qubits, w.num_params
    alpha = embed(w, range(n), 2 * n, 0, 2 * k)
    beta = embed(w, range(n, 2 * n), 2 * n, k, 2 * k)
    return compose(alpha, beta)


# -- batched parameter shifts ----------------------------------------------------


def shifted_unitaries(circuit: Circuit, params, shifts):
    """Unitary at ``params`` and at each single-parameter shift in ``shifts``.

    ``shifts`` is a sequence of ``(index, amount)``. Returns ``(base, stack)``
    where ``stack[s]`` is the unitary with ``params[index] += amount``; a
    parameter no gate reads yields ``base``. Prefix and suffix products are
    cached, so each shift costs one small gate application and one product.
    """
    params = _check_params(circuit, params)
    shifts = [(int(i), float(a)) for i, a in shifts]
    n, d = circuit.num_qubits, circuit.dim
    gates = circuit.gates
    where = circuit.param_gate_positions()
    wanted = {where[i] for i, _ in shifts if i in where}

    prefix = {}
    u = np.eye(d, dtype=complex)
    for j, g in enumerate(gates):
        if j in wanted:
            prefix[j] = u
        u = _apply_matrix(u, g.bound_matrix(params), g.targets, n)
    base = u

    suffix = {}
    rt = np.eye(d, dtype=complex)
    for j in range(len(gates) - 1, -1, -1):
        if j in wanted:
            suffix[j] = rt.T
        g = gates[j]
        # right-multiplying by G is left-multiplying the transpose by G^T
        rt = _apply_matrix(rt, g.bound_matrix(params).T, g.targets, n)

    stack = np.empty((len(shifts), d, d), dtype=complex)
    for slot, (i, amount) in enumerate(shifts):
        j = where.get(i)
        if j is None:
            stack[slot] = base
            continue
        g = gates[j]
        m = _apply_matrix(prefix[j], rotation(g.axis, g.sign * (params[i] + amount)), g.targets, n)
        stack[slot] = suffix[j] @ m
    return base, stack


# -- serialization ---------------------------------------------------------------


def _matrix_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def circuit_to_dict(circuit: Circuit) -> dict:
    gates = []
    for g in circuit.gates:
        entry = {"kind": g.kind, "targets": list(g.targets)}
        if g.kind == "PauliRotation":
            entry["axis"] = g.axis
            entry["param_index"] = g.param_index
            if g.sign != 1:
                entry["sign"] = g.sign
        elif g.kind == "ConstantUnitary":
            entry["matrix"] = _matrix_to_json(g.matrix)
        gates.append(entry)
    return {"num_qubits": circuit.num_qubits, "num_params": circuit.num_params, "gates": gates}


def circuit_from_dict(doc: dict) -> Circuit:
    try:
        gates = []
        for entry in doc["gates"]:
            matrix = entry.get("matrix")
            gates.append(
                GateOp(
                    entry["kind"],
                    tuple(entry["targets"]),
                    entry.get("axis"),
                    entry.get("param_index"),
                    None if matrix is None else _matrix_from_json(matrix),
                    int(entry.get("sign", 1)),
                )
            )
        return Circuit(int(doc["num_qubits"]), gates, int(doc.get("num_params", 0)))
    except (KeyError, TypeError, StateError) as exc:
        raise CircuitError(f"malformed circuit document: {exc}") from exc


def dumps(circuit: Circuit) -> str:
    return json.dumps(circuit_to_dict(circuit))


def loads(text: str) -> Circuit:
    return circuit_from_dict(json.loads(text))
