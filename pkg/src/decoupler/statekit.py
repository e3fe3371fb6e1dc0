"""Dense state and operator primitives.

Qubit 0 is the most significant bit of an amplitude index everywhere in the
package, so ``tensor(a, b)`` puts ``a`` on the low-numbered qubits.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable

import numpy as np

MAX_QUBITS = 12


class StateError(ValueError):
    """Raised for malformed states, operators or qubit indices."""


def num_qubits_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 1 << n != dim:
        raise StateError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        num_qubits_of(amps.size)

    @property
    def num_qubits(self) -> int:
        return num_qubits_of(self.amplitudes.size)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)

    def check(self, atol: float = 1e-12) -> None:
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > atol:
            raise StateError(f"state norm {norm!r} differs from 1")

    def density(self) -> "DensityOperator":
        return DensityOperator(outer(self.amplitudes))


@dataclass(frozen=True)
class DensityOperator:
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise StateError(f"density operator must be square, got {mat.shape}")
        num_qubits_of(mat.shape[0])
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def num_qubits(self) -> int:
        return num_qubits_of(self.matrix.shape[0])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def check(self, atol: float = 1e-12, psd_tol: float = 1e-10) -> None:
        """Full validity check; runs an eigendecomposition, keep it off hot paths."""
        m = self.matrix
        herm = np.max(np.abs(m - m.conj().T))
        if herm > atol:
            raise StateError(f"not Hermitian (deviation {herm:.3e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > atol:
            raise StateError(f"trace {tr!r} differs from 1")
        lowest = np.linalg.eigvalsh(m)[0]
        if lowest < -psd_tol:
            raise StateError(f"negative eigenvalue {lowest:.3e}")


@dataclass(frozen=True)
class UnitaryMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise StateError(f"unitary must be square, got {mat.shape}")
        num_qubits_of(mat.shape[0])
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def num_qubits(self) -> int:
        return num_qubits_of(self.matrix.shape[0])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def check(self, atol: float = 1e-10) -> None:
        if not is_unitary(self.matrix, atol):
            raise StateError("matrix is not unitary")


def is_unitary(u, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= atol)


def outer(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def tensor(*parts):
    """Kronecker product; the first factor occupies the most significant qubits."""
    return reduce(np.kron, (np.asarray(p, dtype=complex) for p in parts))


def basis_state(bits: Iterable[int]) -> np.ndarray:
    bits = list(bits)
    psi = np.zeros(1 << len(bits), dtype=complex)
    psi[int("".join(str(int(b)) for b in bits) or "0", 2)] = 1.0
    return psi


def partial_trace(rho, keep) -> np.ndarray:
    """Reduce ``rho`` to the qubits in ``keep``, preserving their relative order."""
    rho = np.asarray(rho, dtype=complex)
    n = num_qubits_of(rho.shape[0])
    keep = sorted(set(int(q) for q in keep))
    if not keep:
        raise StateError("keep must name at least one qubit")
    if keep[0] < 0 or keep[-1] >= n:
        raise StateError(f"qubit index out of range for {n} qubits: {keep}")
    drop = [q for q in range(n) if q not in keep]
    t = rho.reshape((2,) * (2 * n))
    t = t.transpose(keep + drop + [n + q for q in keep] + [n + q for q in drop])
    dk, dd = 1 << len(keep), 1 << len(drop)
    t = t.reshape(dk, dd, dk, dd)
    return np.einsum("ajbj->ab", t)


def purity(rho) -> float:
    rho = np.asarray(rho)
    # Tr[rho^2] = sum |rho_ij|^2 for Hermitian rho
    return float(np.real(np.vdot(rho, rho)))


def linear_entropy(rho) -> float:
    return 1.0 - purity(rho)


def haar_random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary on ``n`` qubits via QR of a Ginibre matrix."""
    if n < 1:
        raise StateError("need at least one qubit")
    d = 1 << n
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def haar_random_state(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise StateError("need at least one qubit")
    d = 1 << n
    psi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return psi / np.linalg.norm(psi)


def haar_random_states(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent Haar states as rows of a ``(count, 2**n)`` array."""
    d = 1 << n
    psi = rng.standard_normal((count, d)) + 1j * rng.standard_normal((count, d))
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


def random_density(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random mixed state from a Ginibre matrix; used by tests and checks."""
    d = 1 << n
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
