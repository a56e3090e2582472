"""Prepare-select-unprepare block encoding of a real symmetric matrix.

``A = sum_l c_l P_l`` over Pauli strings. System qubits come first and the
ancilla register sits above them, so with the ancillas in ``|0>`` the top-left
``2^s x 2^s`` block of the circuit unitary is ``A / alpha`` with
``alpha = sum_l |c_l|``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce

import numpy as np

from ..errors import CapacityError, InvalidArgumentError
from ..quantum import Angle, CircuitSpec, resolve_angles, simulate

MAX_SYSTEM_QUBITS = 4

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def pauli_matrix(word: str) -> np.ndarray:
    """Matrix of a Pauli word; ``word[q]`` acts on qubit ``q`` (little-endian)."""
    return reduce(np.kron, [_PAULI[ch] for ch in reversed(word)], np.eye(1, dtype=complex))


def pauli_decompose(A: np.ndarray, tol: float = 1e-12) -> list[tuple[float, str]]:
    """Nonzero ``(c, word)`` with ``A = sum c * pauli_matrix(word)``, by full enumeration."""
    A = np.asarray(A, dtype=float)
    dim = A.shape[0]
    s = dim.bit_length() - 1
    if A.shape != (dim, dim) or 2**s != dim:
        raise InvalidArgumentError(f"matrix must be square with a power-of-two size, got {A.shape}")
    terms = []
    for letters in itertools.product("IXYZ", repeat=s):
        word = "".join(letters)
        c = np.trace(pauli_matrix(word) @ A) / dim
        if abs(c) > tol:
            # symmetric real A only picks up words with an even number of Y
            terms.append((float(c.real), word))
    return terms


def pad_to_power_of_two(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    dim = 1 << max(n - 1, 0).bit_length()
    out = np.zeros((dim, dim))
    out[:n, :n] = A
    return out


@dataclass
class BlockEncoding:
    circuit: CircuitSpec
    system_qubits: int
    ancilla_qubits: int
    alpha: float
    terms: list[tuple[float, str]]

    @property
    def ancillas(self) -> tuple[int, ...]:
        return tuple(range(self.system_qubits, self.system_qubits + self.ancilla_qubits))

    def block(self, unitary: np.ndarray | None = None) -> np.ndarray:
        d = 2**self.system_qubits
        if unitary is not None:
            return unitary[:d, :d]
        # only the first d columns matter: simulate those basis states
        basis = np.eye(2**self.circuit.num_qubits, dtype=complex)[:d]
        cols = simulate(self.circuit, resolve_angles(self.circuit), basis)
        return cols[:, :d].T

    def matrix(self) -> np.ndarray:
        return self.alpha * self.block().real


def _prepare(weights: np.ndarray, ancillas: tuple[int, ...], num_qubits: int) -> CircuitSpec:
    """RY tree taking ``|0>`` to ``sum_l sqrt(weights_l) |l>``; bit ``b`` of ``l`` lives on ``ancillas[b]``."""
    spec = CircuitSpec(num_qubits)
    m = len(ancillas)
    probs = np.zeros(2**m)
    probs[: len(weights)] = weights
    for level in range(m - 1, -1, -1):
        higher = ancillas[level + 1:]
        for prefix in range(2 ** (m - 1 - level)):
            # indices l whose bits above `level` equal `prefix`
            block = probs.reshape(2 ** (m - 1 - level), 2, 2**level)[prefix]
            p0, p1 = block[0].sum(), block[1].sum()
            if p1 <= 0:
                continue
            theta = 2 * np.arctan2(np.sqrt(p1), np.sqrt(p0))
            values = tuple((prefix >> b) & 1 for b in range(len(higher)))
            spec.add("RY", ancillas[level], angle=Angle.fixed(theta), controls=higher, control_values=values)
    return spec


def block_encode(A: np.ndarray, tol: float = 1e-12) -> BlockEncoding:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"need a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, atol=1e-12):
        raise InvalidArgumentError("block encoding supports symmetric matrices only")
    s = A.shape[0].bit_length() - 1
    if s > MAX_SYSTEM_QUBITS:
        raise CapacityError(f"{s} system qubits exceed the limit {MAX_SYSTEM_QUBITS}")
    terms = pauli_decompose(A, tol)
    if not terms:
        raise InvalidArgumentError("zero matrix has no block encoding")
    alpha = float(sum(abs(c) for c, _ in terms))
    m = (len(terms) - 1).bit_length()
    n = s + m
    ancillas = tuple(range(s, n))
    prep = _prepare(np.array([abs(c) / alpha for c, _ in terms]), ancillas, n)

    select = CircuitSpec(n)
    for l, (c, word) in enumerate(terms):
        values = tuple((l >> b) & 1 for b in range(m))
        for q, ch in enumerate(word):
            if ch != "I":
                select.add(ch, q, controls=ancillas, control_values=values)
        if c < 0:
            select.add("GPhase", angle=Angle.fixed(np.pi), controls=ancillas, control_values=values)

    circuit = CircuitSpec(n)
    circuit.extend(prep.gates)
    circuit.extend(select.gates)
    circuit.extend(prep.inverse().gates)
    return BlockEncoding(circuit, s, m, alpha, terms)
