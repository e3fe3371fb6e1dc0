"""Compilation costs and the decoupling cost in exact, sampled and Monte-Carlo modes.

The doubled register used throughout puts copy alpha of qubit ``q`` at
position ``q`` and copy beta at ``n + q``; a block's symmetric input state
and swap observable pair each alpha qubit with its beta partner.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import circuit as qc
from .circuit import Circuit, DoubledBinding
from .statekit import PAULI, haar_random_states, num_qubits_of


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    blocks: tuple[tuple[int, ...], ...]
    scored: tuple[int, ...] | None = None

    def __post_init__(self):
        blocks = tuple(tuple(int(q) for q in b) for b in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise PartitionError("partition blocks must be nonempty")
        flat = [q for b in blocks for q in b]
        if len(set(flat)) != len(flat):
            raise PartitionError(f"blocks overlap: {blocks}")
        if sorted(flat) != list(range(len(flat))):
            raise PartitionError(f"blocks must tile qubits 0..{len(flat) - 1}: {blocks}")
        scored = tuple(range(len(blocks))) if self.scored is None else tuple(int(k) for k in self.scored)
        if not scored:
            raise PartitionError("at least one block must be scored")
        if any(not 0 <= k < len(blocks) for k in scored) or len(set(scored)) != len(scored):
            raise PartitionError(f"bad scored block indices {scored}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "scored", scored)

    @property
    def num_qubits(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def norm_factor(self) -> float:
        m = min(len(self.blocks[k]) for k in self.scored)
        return 4.0**m / (4.0**m - 1.0)

    @classmethod
    def bipartition(cls, n: int) -> "Partition":
        """Split into halves of size floor(n/2) and ceil(n/2)."""
        half = n // 2
        return cls((tuple(range(half)), tuple(range(half, n))))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(tuple((q,) for q in range(n)))

    @classmethod
    def parse(cls, spec: str, scored: str | None = None) -> "Partition":
        """Parse ``"0,1;2,3"`` (blocks split by ``;``, qubits by ``,``)."""
        try:
            blocks = [tuple(int(q) for q in part.split(",")) for part in spec.split(";")]
            keep = None if scored is None else [int(k) for k in scored.split(",")]
        except ValueError as exc:
            raise PartitionError(f"cannot parse partition {spec!r}") from exc
        return cls(tuple(blocks), None if keep is None else tuple(keep))

    def refines(self, other: "Partition") -> bool:
        return all(any(set(b) <= set(o) for o in other.blocks) for b in self.blocks)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    std_error: float = 0.0
    shots_used: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class ShotRecord:
    """Destructive-swap-test outcomes: row s holds the bits of shot s per qubit pair."""

    z1: np.ndarray
    z2: np.ndarray
    attempts: int

    def block_signs(self, block: Sequence[int]) -> np.ndarray:
        parity = np.sum(self.z1[:, list(block)] & self.z2[:, list(block)], axis=1) & 1
        return 1 - 2 * parity


def _check_same_dim(u, v):
    u, v = np.asarray(u), np.asarray(v)
    if u.shape != v.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return u, v


# -- compilation costs ---------------------------------------------------------------


def gate_fidelity(u, v) -> float:
    """Haar-averaged state fidelity between the unitaries ``u`` and ``v``."""
    u, v = _check_same_dim(u, v)
    d = u.shape[0]
    overlap = abs(np.vdot(v, u)) ** 2  # |Tr[v^dag u]|^2
    return float(1.0 / (d + 1) + overlap / (d * (d + 1)))


def hst_cost(u, v) -> float:
    u, v = _check_same_dim(u, v)
    d = u.shape[0]
    return float((d + 1) / d * (1.0 - gate_fidelity(u, v)))


def hst_costs(target, stack) -> np.ndarray:
    """HST cost of each unitary in ``stack`` against ``target``; 1 - |Tr[V^dag U]|^2 / d^2."""
    stack = np.asarray(stack)
    d = stack.shape[-1]
    traces = np.einsum("ij,nij->n", np.asarray(target).conj(), stack)
    return 1.0 - np.abs(traces) ** 2 / d**2


def lhst_costs(target, stack) -> np.ndarray:
    """Local HST cost of each unitary in ``stack`` against ``target``.

    Per qubit i, the Choi state of V^dag U is reduced to the pair (i, i') and
    compared with the Bell state; tracing the operator over that leg pair gives
    the overlap as ||Tr_i[V^dag U]||^2 / (2d).
    """
    stack = np.asarray(stack)
    single = stack.ndim == 2
    if single:
        stack = stack[None]
    d = stack.shape[-1]
    n = num_qubits_of(d)
    m = np.matmul(np.asarray(target).conj().T, stack)
    t = m.reshape((len(m),) + (2,) * (2 * n))
    overlap = np.zeros(len(m))
    for i in range(n):
        red = np.trace(t, axis1=1 + i, axis2=1 + n + i)
        overlap += np.sum(np.abs(red.reshape(len(m), -1)) ** 2, axis=1) / (2 * d)
    out = 1.0 - overlap / n
    return out[0] if single else out


def lhst_cost(u, v) -> float:
    u, v = _check_same_dim(u, v)
    return float(lhst_costs(v, u))


def fidelity_upper_bound(c_d: float, n: int) -> float:
    """Largest squared gate fidelity to any local product allowed by a decoupling cost."""
    return min(1.0 - c_d + 3.0 / (2**n + 1), 1.0)


# -- swap observables and symmetric inputs -------------------------------------------------


def _pair_permutation(m: int) -> list[int]:
    return list(range(m, 2 * m)) + list(range(m))


def swap_operator(m: int) -> np.ndarray:
    """Real permutation matrix exchanging the two m-qubit copies."""
    d = 1 << m
    s = np.eye(d * d).reshape((2,) * (4 * m))
    perm = _pair_permutation(m) + list(range(2 * m, 4 * m))
    return s.transpose(perm).reshape(d * d, d * d)


def symmetric_tau(m: int) -> np.ndarray:
    """Normalized projector onto the symmetric subspace of two m-qubit copies."""
    d = 1 << m
    return (np.eye(d * d) + swap_operator(m)) / (d * d + d)


def bell_preparation(m: int) -> Circuit:
    """H on every beta qubit, then CNOT from each beta qubit onto its alpha partner."""
    gates = [qc.GateOp("H", (m + i,)) for i in range(m)]
    gates += [qc.GateOp("CNOT", (m + i, i)) for i in range(m)]
    return Circuit(2 * m, gates, 0)


def bell_measurement(m: int) -> Circuit:
    """Destructive swap test: CNOT beta -> alpha, then H on beta; measure everything."""
    gates = [qc.GateOp("CNOT", (m + i, i)) for i in range(m)]
    gates += [qc.GateOp("H", (m + i,)) for i in range(m)]
    return Circuit(2 * m, gates, 0)


def prepare_bell_pair_state(z1, z2) -> np.ndarray:
    """Bell-basis state labelled by bit strings z1 (alpha copy) and z2 (beta copy)."""
    z1, z2 = [int(b) for b in z1], [int(b) for b in z2]
    if len(z1) != len(z2) or not z1:
        raise ValueError("z1 and z2 must be nonempty and of equal length")
    from .statekit import basis_state

    m = len(z1)
    return qc.apply(bell_preparation(m), (), basis_state(z1 + z2))


def sample_symmetric_pairs(m: int, count: int, rng: np.random.Generator):
    """Rejection-sample ``count`` label pairs with even z1.z2.

    Returns ``(z1, z2, attempts)`` where the bit arrays have shape ``(count, m)``.
    """
    z1 = np.empty((count, m), dtype=np.int64)
    z2 = np.empty((count, m), dtype=np.int64)
    pending = np.arange(count)
    attempts = 0
    while pending.size:
        a = rng.integers(0, 2, size=(pending.size, m))
        b = rng.integers(0, 2, size=(pending.size, m))
        attempts += pending.size
        ok = (np.sum(a & b, axis=1) & 1) == 0
        z1[pending[ok]] = a[ok]
        z2[pending[ok]] = b[ok]
        pending = pending[~ok]
    return z1, z2, attempts


def sample_symmetric_pair(m: int, rng: np.random.Generator):
    z1, z2, _ = sample_symmetric_pairs(m, 1, rng)
    return z1[0], z2[0]


def pauli_twirl_transpose(rho) -> np.ndarray:
    """Transpose written as the signed Pauli sum 2^-n sum (-1)^{z1.z2} s rho s."""
    rho = np.asarray(rho, dtype=complex)
    n = num_qubits_of(rho.shape[0])
    label = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}
    out = np.zeros_like(rho)
    for bits in itertools.product((0, 1), repeat=2 * n):
        z1, z2 = bits[:n], bits[n:]
        sigma = np.array([[1.0]], dtype=complex)
        for a, b in zip(z1, z2):
            sigma = np.kron(sigma, PAULI[label[(a, b)]])
        sign = (-1) ** sum(a * b for a, b in zip(z1, z2))
        out += sign * sigma @ rho @ sigma
    return out / 2**n


# -- decoupling cost: literal doubled-register evaluation ---------------------------------------


def _doubled_tau(partition: Partition) -> np.ndarray:
    n = partition.num_qubits
    order = []
    rho = np.ones((1, 1))
    for block in partition.blocks:
        rho = np.kron(rho, symmetric_tau(len(block)))
        order += list(block) + [n + q for q in block]
    pos = np.argsort(order)  # pos[q] = axis currently holding register qubit q
    t = rho.reshape((2,) * (4 * n))
    t = t.transpose(list(pos) + [2 * n + p for p in pos])
    return t.reshape(4**n, 4**n)


def _binding(w: Circuit, params) -> DoubledBinding:
    if isinstance(params, DoubledBinding):
        return params
    return DoubledBinding(np.asarray(params, dtype=float).reshape(-1))


def _check_partition(w: Circuit, partition: Partition):
    if partition.num_qubits != w.num_qubits:
        raise PartitionError(
            f"partition covers {partition.num_qubits} qubits, circuit has {w.num_qubits}"
        )


def _finish_exact(partition: Partition, swaps: np.ndarray) -> np.ndarray:
    value = partition.norm_factor * (1.0 - np.mean(swaps, axis=-1))
    if np.any(value < -1e-10) or np.any(value > 1 + 1e-10):
        raise FloatingPointError(f"exact decoupling cost left [0, 1]: {value}")
    return np.clip(value, 0.0, 1.0)


def decoupling_cost_exact(w: Circuit, params, partition: Partition) -> CostEstimate:
    """C_D by evolving the product of symmetric inputs through the doubled circuit.

    ``params`` is a parameter vector (shared by both copies) or a DoubledBinding.
    """
    _check_partition(w, partition)
    binding = _binding(w, params)
    n = w.num_qubits
    dw = qc.doubled_circuit(w)
    u = qc.to_unitary(dw, binding.doubled_params())
    rho = u @ _doubled_tau(partition) @ u.conj().T
    t = rho.reshape((2,) * (4 * n))
    swaps = []
    for k in partition.scored:
        perm = list(range(2 * n))
        for q in partition.blocks[k]:
            perm[q], perm[n + q] = n + q, q
        tk = t.transpose(list(range(2 * n)) + [2 * n + p for p in perm])
        swaps.append(np.trace(tk.reshape(4**n, 4**n)).real)
    return CostEstimate(float(_finish_exact(partition, np.array(swaps))))


# -- decoupling cost: Choi-vector closed form ----------------------------------------------------


def _block_weights(partition: Partition) -> float:
    return float(np.prod([4 ** len(b) + 2 ** len(b) for b in partition.blocks]))


def choi_grams(stack, partition: Partition) -> list[list[np.ndarray]]:
    """Reduced Gram matrices of vec(U) for every (scored block, input-block subset).

    With tau_j = (I + S_j)/(d_j^2 + d_j) on every block, the swap expectation of
    scored block k after two copies A, B equals
    sum_T Tr[G^A_{k,T} G^B_{k,T}] / prod_j (d_j^2 + d_j), where G_{k,T} keeps the
    output legs of block k and the input legs of the blocks in T.
    """
    stack = np.asarray(stack)
    if stack.ndim == 2:
        stack = stack[None]
    big = len(stack)
    n = partition.num_qubits
    t = stack.reshape((big,) + (2,) * (2 * n))
    out = []
    nb = len(partition.blocks)
    for k in partition.scored:
        per_k = []
        for r in range(nb + 1):
            for subset in itertools.combinations(range(nb), r):
                keep = [1 + q for q in partition.blocks[k]]
                keep += [1 + n + q for j in subset for q in partition.blocks[j]]
                rest = [a for a in range(1, 2 * n + 1) if a not in keep]
                x = t.transpose([0] + keep + rest).reshape(big, 1 << len(keep), -1)
                per_k.append(x @ x.conj().transpose(0, 2, 1))
        out.append(per_k)
    return out


def swap_expectations_from_grams(grams_a, grams_b, ia, ib, partition: Partition) -> np.ndarray:
    """Swap expectations per scored block for copy pairs (grams_a[ia], grams_b[ib])."""
    ia, ib = np.asarray(ia), np.asarray(ib)
    weight = _block_weights(partition)
    res = np.zeros((ia.size, len(partition.scored)))
    for slot, (per_a, per_b) in enumerate(zip(grams_a, grams_b)):
        total = np.zeros(ia.size)
        for ga, gb in zip(per_a, per_b):
            total += np.einsum("nxy,nxy->n", ga[ia], gb[ib].conj()).real
        res[:, slot] = total / weight
    return res


def swap_expectations_against(stack, ref, partition: Partition) -> np.ndarray:
    """Swap expectations per scored block for the copy pairs (stack[i], ref).

    Same closed form as :func:`choi_grams`, contracting each reshaped Choi
    matrix on its smaller side.
    """
    stack = np.asarray(stack)
    big = len(stack)
    n = partition.num_qubits
    t = stack.reshape((big,) + (2,) * (2 * n))
    r = np.asarray(ref).reshape((2,) * (2 * n))
    nb = len(partition.blocks)
    res = np.zeros((big, len(partition.scored)))
    for slot, k in enumerate(partition.scored):
        total = np.zeros(big)
        for size in range(nb + 1):
            for subset in itertools.combinations(range(nb), size):
                keep = list(partition.blocks[k])
                keep += [n + q for j in subset for q in partition.blocks[j]]
                rest = [a for a in range(2 * n) if a not in keep]
                a, b = 1 << len(keep), 1 << len(rest)
                x = t.transpose([0] + [1 + q for q in keep] + [1 + q for q in rest]).reshape(big, a, b)
                x0 = r.transpose(keep + rest).reshape(a, b)
                if a <= b:
                    y = (x0 @ x0.conj().T) @ x
                    total += np.einsum("nab,nab->n", x.conj(), y).real
                else:
                    y = x0.conj().T @ x
                    total += np.einsum("nab,nab->n", y.conj(), y).real
        res[:, slot] = total / _block_weights(partition)
    return res


def decoupling_cost_unitaries(u_alpha, u_beta, partition: Partition) -> np.ndarray:
    """Exact C_D for copy unitaries (single matrices or stacks) via the Choi closed form."""
    same = u_alpha is u_beta
    ua, ub = np.asarray(u_alpha), np.asarray(u_beta)
    single = ua.ndim == 2
    if single:
        ua, ub = ua[None], ub[None]
    ga = choi_grams(ua, partition)
    gb = ga if same else choi_grams(ub, partition)
    idx = np.arange(len(ua))
    swaps = swap_expectations_from_grams(ga, gb, idx, idx, partition)
    value = _finish_exact(partition, swaps)
    return value[0] if single else value


# -- decoupling cost: sampled destructive swap test -----------------------------------------------


def _outcome_table(w: Circuit, binding: DoubledBinding) -> np.ndarray:
    """Column ``c`` holds the outcome distribution for Bell-prepared input label ``c``."""
    n = w.num_qubits
    chain = qc.compose(bell_preparation(n), qc.doubled_circuit(w), bell_measurement(n))
    # prep/measurement gates carry no parameters; pad to the doubled parameter count
    u = qc.to_unitary(chain, binding.doubled_params())
    return np.abs(u) ** 2


def sample_shots(w: Circuit, params, partition: Partition, shots: int, rng: np.random.Generator) -> ShotRecord:
    """Simulate ``shots`` runs of Bell-pair preparation, the doubled circuit and the swap test."""
    if shots < 1:
        raise ValueError("shots must be at least 1")
    _check_partition(w, partition)
    n = w.num_qubits
    binding = _binding(w, params)
    z1 = np.empty((shots, n), dtype=np.int64)
    z2 = np.empty((shots, n), dtype=np.int64)
    attempts = 0
    for block in partition.blocks:
        a, b, tries = sample_symmetric_pairs(len(block), shots, rng)
        z1[:, list(block)] = a
        z2[:, list(block)] = b
        attempts += tries
    weights = 1 << np.arange(2 * n - 1, -1, -1)
    labels = np.concatenate([z1, z2], axis=1) @ weights
    cdf = np.cumsum(_outcome_table(w, binding), axis=0)
    cdf /= cdf[-1]
    u = rng.random(shots)
    outcome = np.empty(shots, dtype=np.int64)
    for label in np.unique(labels):
        hit = labels == label
        outcome[hit] = np.searchsorted(cdf[:, label], u[hit], side="right")
    np.minimum(outcome, 4**n - 1, out=outcome)
    bits = (outcome[:, None] >> np.arange(2 * n - 1, -1, -1)) & 1
    return ShotRecord(bits[:, :n], bits[:, n:], attempts)


def estimate_from_shots(record: ShotRecord, partition: Partition) -> CostEstimate:
    signs = np.stack([record.block_signs(partition.blocks[k]) for k in partition.scored], axis=1)
    per_shot = signs.mean(axis=1)
    shots = len(per_shot)
    norm = partition.norm_factor
    value = norm * (1.0 - per_shot.mean())
    spread = per_shot.std(ddof=1) if shots > 1 else 0.0
    return CostEstimate(float(value), float(norm * spread / np.sqrt(shots)), shots)


def decoupling_cost_sampled(w: Circuit, params, partition: Partition, shots: int, rng) -> CostEstimate:
    record = sample_shots(w, params, partition, shots, rng)
    return estimate_from_shots(record, partition)


# -- decoupling cost: Haar Monte Carlo ---------------------------------------------------------


def decoupling_cost_mc(
    w: Circuit, params, partition: Partition, samples: int, rng, batch: int = 50_000
) -> CostEstimate:
    """Average block linear entropy over Haar product inputs, one sample at a time in batches."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    _check_partition(w, partition)
    n = w.num_qubits
    u = qc.to_unitary(w, params)
    order = [q for b in partition.blocks for q in b]
    pos = list(np.argsort(order))
    norm = partition.norm_factor
    total = total_sq = 0.0
    done = 0
    while done < samples:
        size = min(batch, samples - done)
        psi = np.ones((size, 1), dtype=complex)
        for block in partition.blocks:
            part = haar_random_states(len(block), size, rng)
            psi = (psi[:, :, None] * part[:, None, :]).reshape(size, -1)
        psi = psi.reshape((size,) + (2,) * n).transpose([0] + [1 + p for p in pos])
        out = (psi.reshape(size, -1) @ u.T).reshape((size,) + (2,) * n)
        ent = np.zeros(size)
        for k in partition.scored:
            keep = [1 + q for q in partition.blocks[k]]
            rest = [a for a in range(1, n + 1) if a not in keep]
            x = out.transpose([0] + keep + rest).reshape(size, 1 << len(keep), -1)
            g = x @ x.conj().transpose(0, 2, 1)
            ent += 1.0 - np.sum(np.abs(g) ** 2, axis=(1, 2))
        # pure reduced states leave +-1e-17 rounding residue; report those as exactly zero
        ent[np.abs(ent) < 1e-14] = 0.0
        y = norm * ent / len(partition.scored)
        total += y.sum()
        total_sq += (y**2).sum()
        done += size
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0) * samples / max(samples - 1, 1)
    return CostEstimate(float(mean), float(np.sqrt(var / samples)), samples)
