"""Alternating phase sequences around a block encoding.

With ``d + 1`` phases and ``Pi_phi = exp(i phi (2 Pi - I))`` the operator is,
reading right to left as time order::

    even d:  Pi_{phi_1} U^dag PiT_{phi_2} U Pi_{phi_3} ... U Pi_{phi_{d+1}}
    odd d:   PiT_{phi_1} U Pi_{phi_2} U^dag PiT_{phi_3} ... U Pi_{phi_{d+1}}

``Pi`` and ``PiT`` both project the ancilla register onto ``|0>``; they differ
only by which side of ``U`` they sit on. Each phase uses one extra flag qubit:
CNOT onto the flag when the ancillas are all zero, ``RZ(2 phi)`` on the flag,
then the same CNOT again.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CapacityError, InvalidArgumentError
from ..quantum import MAX_UNITARY_QUBITS, Angle, CircuitSpec, Gate, unitary_of
from .blockencoding import BlockEncoding

SYSTEM, EXTENDED = "system", "extended"


@dataclass(frozen=True)
class QsvtPhaseSequence:
    phases: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        if len(self.phases) < 2:
            raise InvalidArgumentError("need at least two phases (degree >= 1)")

    @property
    def degree(self) -> int:
        return len(self.phases) - 1

    @property
    def parity(self) -> str:
        return "even" if self.degree % 2 == 0 else "odd"


def projector_phase(phi: float, ancillas: tuple[int, ...], flag: int, which: str = SYSTEM) -> list[Gate]:
    """Gates applying ``exp(i phi (2 Pi - I))`` where ``Pi`` = ancillas all zero; flag in and out at ``|0>``."""
    if which not in (SYSTEM, EXTENDED):
        raise InvalidArgumentError(f"unknown projector {which!r}")
    label = f"{'pi' if which == SYSTEM else 'pi_ext'}({phi:.6g})"
    ancillas = tuple(ancillas)
    zeros = (0,) * len(ancillas)
    mark = Gate("X", (flag,), None, ancillas, zeros, label)
    # flag=1 inside Pi, where RZ(2 phi) gives e^{+i phi}
    rot = Gate("RZ", (flag,), Angle.fixed(2.0 * phi), (), (), label)
    return [mark, rot, mark]


def _tagged(gates, label):
    return [Gate(g.kind, g.targets, g.angle, g.controls, g.control_values, label) for g in gates]


def qsvt_circuit(block: BlockEncoding, phases: QsvtPhaseSequence | list) -> CircuitSpec:
    if not isinstance(phases, QsvtPhaseSequence):
        phases = QsvtPhaseSequence(tuple(phases))
    n = block.circuit.num_qubits + 1
    if n > MAX_UNITARY_QUBITS:
        raise CapacityError(f"{n} qubits exceed the limit {MAX_UNITARY_QUBITS}")
    flag = n - 1
    anc = block.ancillas
    U = _tagged(block.circuit.gates, "U")
    Udg = _tagged(block.circuit.inverse().gates, "U_dag")
    d = phases.degree
    phi = phases.phases

    # operator factors left to right; the unitary just left of the last phase is U
    ordered: list[list[Gate]] = []
    for k in range(d + 1):
        if k > 0:
            ordered.append(U if (d - k) % 2 == 0 else Udg)
        # a phase on the output side of U uses the extended projector
        which = EXTENDED if k < d and (d - k - 1) % 2 == 0 else SYSTEM
        ordered.append(projector_phase(phi[k], anc, flag, which))
    spec = CircuitSpec(n)
    for frag in reversed(ordered):
        spec.extend(frag)
    return spec


def qsvt_block(block: BlockEncoding, phases) -> np.ndarray:
    circ = qsvt_circuit(block, phases)
    d = 2**block.system_qubits
    return unitary_of(circ)[:d, :d]


def _reflection(sigma: float) -> np.ndarray:
    c = np.sqrt(max(0.0, 1.0 - sigma * sigma))
    return np.array([[sigma, c], [c, -sigma]], dtype=complex)


def singular_value_polynomial(sigma: float, phases) -> complex:
    """Top-left entry of the alternating product restricted to one 2x2 invariant subspace."""
    phases = QsvtPhaseSequence(tuple(phases)) if not isinstance(phases, QsvtPhaseSequence) else phases
    R = _reflection(sigma)
    out = np.eye(2, dtype=complex)
    for k, p in enumerate(phases.phases):
        if k > 0:
            out = out @ R
        out = out @ np.diag([np.exp(1j * p), np.exp(-1j * p)])
    return complex(out[0, 0])


def svd_oracle(A_scaled: np.ndarray, phases) -> np.ndarray:
    """``sum_i P(sigma_i) u_i v_i^T`` (odd degree) or ``v_i v_i^T`` (even degree)."""
    phases = QsvtPhaseSequence(tuple(phases)) if not isinstance(phases, QsvtPhaseSequence) else phases
    W, S, Vt = np.linalg.svd(np.asarray(A_scaled, dtype=float))
    left = W if phases.degree % 2 == 1 else Vt.T
    out = np.zeros(A_scaled.shape, dtype=complex)
    for i, s in enumerate(S):
        out += singular_value_polynomial(s, phases) * np.outer(left[:, i], Vt[i])
    return out
