"""Dense statevector simulation with batched angles and parameter-shift gradients.

Qubit ordering is little-endian: qubit ``q`` is bit ``q`` of the amplitude
index, so qubit 0 is the least significant bit.

Rotation conventions::

    RX(t) = exp(-i t X / 2)    RY(t) = exp(-i t Y / 2)    RZ(t) = exp(-i t Z / 2)
    IsingZZ(t) = exp(-i t Z(x)Z / 2)
    PhaseZ(t) = diag(1, e^{i t})
    GPhase(t) = e^{i t}  (only meaningful with controls)
    CRZ(t) = RZ(t) on targets[1] when targets[0] is 1

Two-qubit kinds take ``targets=(control, target)``; any gate may carry extra
``controls`` with ``control_values``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import CapacityError, InvalidArgumentError

MAX_QUBITS = 14
MAX_UNITARY_QUBITS = 12

FIXED, FEATURE, PARAM = "fixed", "feature", "param"

PARAMETRIC = {"RX", "RY", "RZ", "CRZ", "IsingZZ", "PhaseZ", "GPhase"}
FIXED_KINDS = {"H", "X", "Y", "Z", "CNOT", "CZ"}
_ARITY = {
    "H": 1, "X": 1, "Y": 1, "Z": 1, "RX": 1, "RY": 1, "RZ": 1, "PhaseZ": 1,
    "CNOT": 2, "CZ": 2, "CRZ": 2, "IsingZZ": 2, "GPhase": 0,
}

# exact shift rules (offset, coefficient) for d<f>/d(angle)
_TWO_TERM = ((np.pi / 2, 0.5), (-np.pi / 2, -0.5))
_C_PLUS = (np.sqrt(2) + 1) / (4 * np.sqrt(2))
_C_MINUS = (np.sqrt(2) - 1) / (4 * np.sqrt(2))
_FOUR_TERM = (
    (np.pi / 2, _C_PLUS),
    (-np.pi / 2, -_C_PLUS),
    (3 * np.pi / 2, -_C_MINUS),
    (-3 * np.pi / 2, _C_MINUS),
)


@dataclass(frozen=True)
class Angle:
    source: str
    index: int = 0
    value: float = 0.0
    scale: float = 1.0

    @staticmethod
    def fixed(value: float) -> "Angle":
        return Angle(FIXED, value=float(value))

    @staticmethod
    def feature(index: int, scale: float = 1.0) -> "Angle":
        return Angle(FEATURE, index=int(index), scale=float(scale))

    @staticmethod
    def param(index: int, scale: float = 1.0) -> "Angle":
        return Angle(PARAM, index=int(index), scale=float(scale))

    def scaled(self, factor: float) -> "Angle":
        if self.source == FIXED:
            return replace(self, value=self.value * factor)
        return replace(self, scale=self.scale * factor)


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: Angle | None = None
    controls: tuple[int, ...] = ()
    control_values: tuple[int, ...] = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise InvalidArgumentError(f"unknown gate kind {self.kind!r}")
        if len(self.targets) != _ARITY[self.kind]:
            raise InvalidArgumentError(f"{self.kind} acts on {_ARITY[self.kind]} qubit(s), got {self.targets}")
        wires = tuple(self.targets) + tuple(self.controls)
        if len(set(wires)) != len(wires):
            raise InvalidArgumentError(f"repeated qubit in {self.kind} {wires}")
        if (self.kind in PARAMETRIC) != (self.angle is not None):
            raise InvalidArgumentError(f"{self.kind} angle source mismatch")
        if self.control_values and len(self.control_values) != len(self.controls):
            raise InvalidArgumentError("control_values must match controls")

    @property
    def wires(self) -> tuple[int, ...]:
        return tuple(self.targets) + tuple(self.controls)

    @property
    def ctrl_values(self) -> tuple[int, ...]:
        return self.control_values or (1,) * len(self.controls)

    def inverse(self) -> "Gate":
        if self.angle is None:
            return self
        return replace(self, angle=self.angle.scaled(-1.0))

    def shift_rule(self):
        # generators with three distinct eigenvalues need the four-term rule
        controlled_rotation = self.kind == "CRZ" or (
            self.controls and self.kind in {"RX", "RY", "RZ", "IsingZZ"}
        )
        return _FOUR_TERM if controlled_rotation else _TWO_TERM


@dataclass
class CircuitSpec:
    num_qubits: int
    gates: list[Gate] = field(default_factory=list)
    num_param_slots: int = 0
    num_feature_slots: int = 0

    def __post_init__(self):
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate) -> None:
        if any(not 0 <= w < self.num_qubits for w in g.wires):
            raise InvalidArgumentError(f"gate {g.kind} on {g.wires} outside {self.num_qubits} qubits")
        if g.angle is not None:
            if g.angle.source == PARAM and g.angle.index >= self.num_param_slots:
                raise InvalidArgumentError(f"param slot {g.angle.index} >= {self.num_param_slots}")
            if g.angle.source == FEATURE and g.angle.index >= self.num_feature_slots:
                raise InvalidArgumentError(f"feature slot {g.angle.index} >= {self.num_feature_slots}")

    def add(self, kind: str, *targets: int, angle: Angle | None = None, controls=(), control_values=(), label=""):
        g = Gate(kind, tuple(targets), angle, tuple(controls), tuple(control_values), label)
        self._check(g)
        self.gates.append(g)
        return g

    def extend(self, gates: Sequence[Gate]) -> None:
        for g in gates:
            self._check(g)
            self.gates.append(g)

    def inverse(self) -> "CircuitSpec":
        return CircuitSpec(
            self.num_qubits,
            [g.inverse() for g in reversed(self.gates)],
            self.num_param_slots,
            self.num_feature_slots,
        )

    def param_occurrences(self, slot: int) -> list[int]:
        return [
            gi for gi, g in enumerate(self.gates)
            if g.angle is not None and g.angle.source == PARAM and g.angle.index == slot
        ]

    def to_json(self) -> str:
        """Debug dump of the gate list with unresolved angle sources."""
        gates = []
        for g in self.gates:
            d = {"kind": g.kind, "targets": list(g.targets)}
            if g.controls:
                d["controls"] = list(g.controls)
                d["control_values"] = list(g.ctrl_values)
            if g.angle is not None:
                d["angle"] = {"source": g.angle.source, "index": g.angle.index,
                              "value": g.angle.value, "scale": g.angle.scale}
            if g.label:
                d["label"] = g.label
            gates.append(d)
        return json.dumps(
            {"num_qubits": self.num_qubits, "num_param_slots": self.num_param_slots,
             "num_feature_slots": self.num_feature_slots, "gates": gates},
            indent=1,
        )


# ---------------------------------------------------------------------------
# states


def _check_width(n: int, limit: int = MAX_QUBITS) -> None:
    if not 1 <= n <= limit:
        raise CapacityError(f"{n} qubits outside the supported range 1..{limit}")


def init_state(num_qubits: int, basis: str = "all_zero") -> np.ndarray:
    _check_width(num_qubits)
    dim = 2**num_qubits
    if basis == "all_zero":
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
    elif basis == "all_plus":
        psi = np.full(dim, 2 ** (-num_qubits / 2), dtype=complex)
    else:
        raise InvalidArgumentError(f"unknown basis {basis!r}")
    return psi


@lru_cache(maxsize=None)
def _zsigns(n: int) -> np.ndarray:
    """(n, 2**n) array of Z eigenvalues: +1 where the qubit bit is 0."""
    idx = np.arange(2**n)
    return (1 - 2 * ((idx[None, :] >> np.arange(n)[:, None]) & 1)).astype(float)


@lru_cache(maxsize=None)
def _control_mask(n: int, controls: tuple[int, ...], values: tuple[int, ...]) -> np.ndarray:
    idx = np.arange(2**n)
    mask = np.ones(2**n, dtype=bool)
    for c, v in zip(controls, values):
        mask &= ((idx >> c) & 1) == v
    return mask


_DIAGONAL = {"Z", "RZ", "IsingZZ", "PhaseZ", "GPhase"}


@lru_cache(maxsize=None)
def _diag_coeffs(kind: str, targets: tuple, ctrls: tuple, vals: tuple, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(coef, const) with the gate's phase equal to exp(i (angle * coef + const))."""
    z = _zsigns(n)
    const = np.zeros(2**n)
    if kind == "Z":
        coef = np.zeros(2**n)
        const = np.pi * (1 - z[targets[0]]) / 2
    elif kind == "RZ":
        coef = -0.5 * z[targets[0]]
    elif kind == "IsingZZ":
        coef = -0.5 * z[targets[0]] * z[targets[1]]
    elif kind == "PhaseZ":
        coef = (1 - z[targets[0]]) / 2
    elif kind == "GPhase":
        coef = np.ones(2**n)
    else:
        raise InvalidArgumentError(kind)
    if ctrls:
        mask = _control_mask(n, ctrls, vals)
        coef, const = coef * mask, const * mask
    return coef, const


def _normalise(g: Gate) -> tuple[str, tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """Rewrite controlled two-qubit kinds as (base, targets, controls, values)."""
    ctrls, vals = tuple(g.controls), g.ctrl_values
    if g.kind == "CNOT":
        return "X", (g.targets[1],), (g.targets[0],) + ctrls, (1,) + vals
    if g.kind == "CZ":
        return "Z", (g.targets[1],), (g.targets[0],) + ctrls, (1,) + vals
    if g.kind == "CRZ":
        return "RZ", (g.targets[1],), (g.targets[0],) + ctrls, (1,) + vals
    return g.kind, tuple(g.targets), ctrls, vals


def _apply_diag(psi: np.ndarray, gates: list[tuple], theta: np.ndarray, n: int) -> np.ndarray:
    """Apply a run of diagonal gates as one phase; ``theta`` is (B, len(gates))."""
    coefs, const = [], np.zeros(2**n)
    for kind, targets, ctrls, vals in gates:
        c, k = _diag_coeffs(kind, targets, ctrls, vals, n)
        coefs.append(c)
        const = const + k
    phase = theta @ np.array(coefs) + const
    return psi * np.exp(1j * phase)


def _apply_1q(psi: np.ndarray, kind: str, q: int, ctrls, vals, theta: np.ndarray, n: int) -> np.ndarray:
    B = psi.shape[0]
    view = psi.reshape(B, -1, 2, 2**q)
    a0, a1 = view[:, :, 0, :], view[:, :, 1, :]
    out = np.empty_like(view)
    if kind == "RY":
        c = np.cos(theta / 2)[:, None, None]
        s = np.sin(theta / 2)[:, None, None]
        out[:, :, 0, :] = c * a0 - s * a1
        out[:, :, 1, :] = s * a0 + c * a1
    elif kind == "RX":
        c = np.cos(theta / 2)[:, None, None]
        s = -1j * np.sin(theta / 2)[:, None, None]
        out[:, :, 0, :] = c * a0 + s * a1
        out[:, :, 1, :] = s * a0 + c * a1
    elif kind == "H":
        r = 1 / np.sqrt(2)
        out[:, :, 0, :] = r * (a0 + a1)
        out[:, :, 1, :] = r * (a0 - a1)
    elif kind == "X":
        out[:, :, 0, :] = a1
        out[:, :, 1, :] = a0
    elif kind == "Y":
        out[:, :, 0, :] = -1j * a1
        out[:, :, 1, :] = 1j * a0
    else:
        raise InvalidArgumentError(kind)
    out = out.reshape(B, -1)
    if ctrls:
        out = np.where(_control_mask(n, ctrls, vals), out, psi)
    return out


def _plan(spec: CircuitSpec) -> list[tuple]:
    """Group the gate list into fused steps.

    Consecutive diagonal gates become one ``("diag", [...], [gate idx])`` step;
    adjacent uncontrolled RX/RY pairs on the same qubit add their angles.
    """
    steps: list[tuple] = []
    for gi, g in enumerate(spec.gates):
        kind, targets, ctrls, vals = _normalise(g)
        if kind in _DIAGONAL:
            if steps and steps[-1][0] == "diag":
                steps[-1][1].append((kind, targets, ctrls, vals))
                steps[-1][2].append(gi)
            else:
                steps.append(("diag", [(kind, targets, ctrls, vals)], [gi]))
            continue
        prev = steps[-1] if steps else None
        if (
            kind in {"RX", "RY"} and not ctrls and prev is not None and prev[0] == "1q"
            and prev[1] == kind and prev[2] == targets[0] and not prev[3]
        ):
            prev[5].append(gi)
            continue
        steps.append(("1q", kind, targets[0], ctrls, vals, [gi]))
    return steps


def resolve_angles(spec: CircuitSpec, params=None, features=None) -> np.ndarray:
    """Per-gate angles, shape (B, num_gates); B follows the batched inputs."""
    params = np.zeros(spec.num_param_slots) if params is None else np.asarray(params, dtype=float)
    features = np.zeros(spec.num_feature_slots) if features is None else np.asarray(features, dtype=float)
    if params.shape[-1] != spec.num_param_slots or features.shape[-1] != spec.num_feature_slots:
        raise InvalidArgumentError(
            f"expected {spec.num_param_slots} params and {spec.num_feature_slots} features, "
            f"got {params.shape[-1]} and {features.shape[-1]}"
        )
    params = np.atleast_2d(params)
    features = np.atleast_2d(features)
    B = max(params.shape[0], features.shape[0])
    angles = np.zeros((B, len(spec.gates)))
    for gi, g in enumerate(spec.gates):
        a = g.angle
        if a is None:
            continue
        if a.source == FIXED:
            angles[:, gi] = a.value
        elif a.source == PARAM:
            angles[:, gi] = a.scale * params[:, a.index]
        else:
            angles[:, gi] = a.scale * features[:, a.index]
    if not np.all(np.isfinite(angles)):
        raise InvalidArgumentError("non-finite angle")
    return angles


def simulate(spec: CircuitSpec, angles: np.ndarray, initial: np.ndarray | None = None) -> np.ndarray:
    """Run the gate list with explicit per-gate angles.

    ``angles`` is (B, num_gates); ``initial`` is a state (2**n,) or a batch
    (B, 2**n). Returns the (B, 2**n) output batch.
    """
    n = spec.num_qubits
    _check_width(n)
    angles = np.atleast_2d(angles)
    if initial is None:
        initial = init_state(n)
    initial = np.asarray(initial, dtype=complex)
    B = max(angles.shape[0], initial.shape[0] if initial.ndim == 2 else 1)
    psi = np.array(np.broadcast_to(initial, (B, 2**n)))
    if angles.shape[0] != B:
        angles = np.broadcast_to(angles, (B, angles.shape[1]))
    for step in _plan(spec):
        if step[0] == "diag":
            psi = _apply_diag(psi, step[1], angles[:, step[2]], n)
        else:
            _, kind, q, ctrls, vals, idx = step
            theta = angles[:, idx[0]] if len(idx) == 1 else angles[:, idx].sum(1)
            psi = _apply_1q(psi, kind, q, ctrls, vals, theta, n)
    return psi


def apply_gate(state: np.ndarray, gate: Gate, angle: float = 0.0) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    n = int(np.log2(state.shape[-1]))
    if any(not 0 <= w < n for w in gate.wires):
        raise InvalidArgumentError(f"gate wires {gate.wires} outside {n} qubits")
    if not np.isfinite(angle):
        raise InvalidArgumentError("non-finite angle")
    if gate.angle is not None and gate.angle.source != FIXED:
        gate = replace(gate, angle=Angle.fixed(0.0))
    spec = CircuitSpec(n, [gate], 0, 0)
    return simulate(spec, np.array([[float(angle)]]), state)[0]


def run_circuit(spec: CircuitSpec, params=None, features=None, initial: np.ndarray | None = None) -> np.ndarray:
    """Final state; batched (B, 2**n) when params or features are 2-D."""
    angles = resolve_angles(spec, params, features)
    out = simulate(spec, angles, initial)
    batched = (params is not None and np.ndim(params) == 2) or (features is not None and np.ndim(features) == 2)
    return out if batched else out[0]


def expectation_z(state: np.ndarray, qubit: int | None = None) -> np.ndarray | float:
    """<Z_qubit>; with ``qubit=None`` all qubits at once (last axis)."""
    state = np.asarray(state)
    n = int(np.log2(state.shape[-1]))
    probs = np.abs(state) ** 2
    if qubit is None:
        return probs @ _zsigns(n).T
    if not 0 <= qubit < n:
        raise InvalidArgumentError(f"qubit {qubit} outside {n} qubits")
    val = probs @ _zsigns(n)[qubit]
    return float(val) if np.ndim(val) == 0 else val


def _shift_table(spec: CircuitSpec) -> list[tuple[int, int, float, float]]:
    """(slot, gate index, angle offset, coefficient * scale) for every shifted run."""
    table = []
    for gi, g in enumerate(spec.gates):
        if g.angle is None or g.angle.source != PARAM:
            continue
        for offset, coeff in g.shift_rule():
            table.append((g.angle.index, gi, offset, coeff * g.angle.scale))
    return table


def z_jacobian(spec: CircuitSpec, params, features=None, qubits: Sequence[int] | None = None):
    """Expectations and their parameter-shift Jacobian, batched over feature rows.

    Returns ``(z, jac)`` with ``z`` of shape (B, Q) and ``jac`` of shape
    (B, Q, num_param_slots) where Q indexes ``qubits`` (default: all).
    """
    qubits = list(range(spec.num_qubits)) if qubits is None else list(qubits)
    base = resolve_angles(spec, params, features)
    B, G = base.shape
    table = _shift_table(spec)
    S = 1 + len(table)
    angles = np.repeat(base[:, None, :], S, axis=1)
    for s, (_, gi, offset, _) in enumerate(table, start=1):
        angles[:, s, gi] += offset
    psi = simulate(spec, angles.reshape(B * S, G))
    z = expectation_z(psi).reshape(B, S, -1)[:, :, qubits]
    jac = np.zeros((B, len(qubits), spec.num_param_slots))
    for s, (slot, _, _, c) in enumerate(table, start=1):
        jac[:, :, slot] += c * z[:, s, :]
    return z[:, 0, :], jac


def parameter_shift_gradient(spec: CircuitSpec, params, features=None, observables=None) -> np.ndarray:
    """Jacobian [num_observables x num_param_slots] of single-qubit Z expectations.

    ``observables`` is a list of ``(qubit, "Z")`` pairs (default: every qubit).
    Slots feeding several gates accumulate one shifted pair per occurrence.
    """
    if observables is None:
        qubits = list(range(spec.num_qubits))
    else:
        qubits = []
        for q, op in observables:
            if op != "Z":
                raise InvalidArgumentError(f"only Z observables are supported, got {op!r}")
            qubits.append(int(q))
    feats = None if features is None else np.asarray(features, dtype=float).reshape(1, -1)
    _, jac = z_jacobian(spec, np.asarray(params, dtype=float).reshape(1, -1), feats, qubits)
    return jac[0]


def unitary_of(spec: CircuitSpec, params=None, features=None) -> np.ndarray:
    """Dense unitary; column k is the circuit applied to basis state k."""
    n = spec.num_qubits
    _check_width(n, MAX_UNITARY_QUBITS)
    angles = resolve_angles(spec, params, features)
    out = simulate(spec, angles, np.eye(2**n, dtype=complex))
    return out.T


# ---------------------------------------------------------------------------
# dense reference matrices, used as an independent oracle in tests


def gate_matrix(g: Gate, angle: float, n: int) -> np.ndarray:
    """Full 2**n x 2**n matrix of one gate built by Kronecker products."""
    I2 = np.eye(2, dtype=complex)
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    one_q = {
        "H": np.array([[1, 1], [1, -1]]) / np.sqrt(2),
        "X": np.array([[0, 1], [1, 0]]),
        "Y": np.array([[0, -1j], [1j, 0]]),
        "Z": np.diag([1, -1]),
        "RX": np.array([[c, -1j * s], [-1j * s, c]]),
        "RY": np.array([[c, -s], [s, c]]),
        "RZ": np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)]),
        "PhaseZ": np.diag([1, np.exp(1j * angle)]),
    }

    def embed(ops: dict[int, np.ndarray]) -> np.ndarray:
        m = np.array([[1.0]], dtype=complex)
        for q in reversed(range(n)):
            m = np.kron(m, ops.get(q, I2))
        return m

    P0, P1 = np.diag([1, 0]).astype(complex), np.diag([0, 1]).astype(complex)
    kind, targets, ctrls, vals = _normalise(g)
    if kind == "IsingZZ":
        zz = embed({targets[0]: one_q["Z"], targets[1]: one_q["Z"]})
        base = np.cos(angle / 2) * np.eye(2**n) - 1j * np.sin(angle / 2) * zz
    elif kind == "GPhase":
        base = np.exp(1j * angle) * np.eye(2**n)
    else:
        base = embed({targets[0]: one_q[kind]})
    if not ctrls:
        return base
    proj = embed({c: (P1 if v else P0) for c, v in zip(ctrls, vals)})
    return proj @ base + (np.eye(2**n) - proj)


def dense_unitary(spec: CircuitSpec, params=None, features=None) -> np.ndarray:
    angles = resolve_angles(spec, params, features)[0]
    U = np.eye(2**spec.num_qubits, dtype=complex)
    for gi, g in enumerate(spec.gates):
        U = gate_matrix(g, angles[gi], spec.num_qubits) @ U
    return U
