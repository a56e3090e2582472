"""Problem-specific PQC Q-network: one qubit per node, affine readout of <Z_i>.

Each layer applies, in order: Hadamards (first layer only), RY load and RY
time encodings, CRZ from every pickup to its delivery, fixed IsingZZ
couplings among pickups and among deliveries, then a trainable RZ sublayer
and a trainable RY sublayer over every qubit. Parameters are laid out layer by layer as
``[crz_0 .. crz_{n-1}, rz_0, ry_0, rz_1, ry_1, ...]``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .environment import EnvState, Instance
from .errors import CapacityError, InvalidArgumentError
from .quantum import FEATURE, MAX_QUBITS, Angle, CircuitSpec, expectation_z, run_circuit, z_jacobian


@dataclass(frozen=True)
class CircuitConfig:
    layers: int = 1
    reupload: bool = True
    isingzz_scale: float = 1.0
    # opt-in RZ(pi * flag) per qubit ahead of each feature block: visited flag on
    # node qubits, at-depot flag on the depot qubit; adds no trainable parameters
    encode_flags: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise InvalidArgumentError("need at least one layer")


def _check_size(num_customers: int) -> None:
    if num_customers % 2:
        raise InvalidArgumentError(f"node count {num_customers} must be even (pickup/delivery pairs)")
    if num_customers + 1 > MAX_QUBITS:
        raise CapacityError(f"{num_customers + 1} qubits exceed the simulator limit {MAX_QUBITS}")


def num_trainable(config: CircuitConfig, num_customers: int) -> tuple[int, int]:
    """(quantum, classical) parameter counts for ``num_customers`` = N nodes."""
    if num_customers % 2:
        raise InvalidArgumentError(f"N={num_customers} must be even")
    N = num_customers
    quantum = config.layers * (2 * N + N // 2 + 2)
    classical = (N + 1) ** 2 + (N + 1)
    return quantum, classical


def _couplings(num_customers: int) -> list[tuple[int, int]]:
    pickups = list(range(1, num_customers + 1, 2))
    deliveries = list(range(2, num_customers + 1, 2))
    return list(itertools.combinations(pickups, 2)) + list(itertools.combinations(deliveries, 2))


def pqc_template(num_customers: int, config: CircuitConfig) -> CircuitSpec:
    """Instance-independent circuit; IsingZZ angles read extra feature slots.

    Feature slots ``2q`` / ``2q+1`` hold the load/time angles of qubit ``q``;
    with ``encode_flags`` slots ``2(N+1)+q`` hold the 0/1 flags. The remaining
    slots hold ``w_ij / w_max`` for each coupling ``c``.
    """
    _check_size(num_customers)
    N = num_customers
    nq = N + 1
    pairs = [(p, p + 1) for p in range(1, N + 1, 2)]
    couplings = _couplings(N)
    per_layer = N // 2 + 2 * nq
    flag_base = 2 * nq
    coupling_base = 3 * nq if config.encode_flags else 2 * nq
    spec = CircuitSpec(nq, num_param_slots=config.layers * per_layer, num_feature_slots=coupling_base + len(couplings))
    for layer in range(config.layers):
        base = layer * per_layer
        if layer == 0:
            for q in range(nq):
                spec.add("H", q)
        if layer == 0 or config.reupload:
            if config.encode_flags:
                for q in range(nq):
                    spec.add("RZ", q, angle=Angle.feature(flag_base + q, np.pi))
            for q in range(nq):
                spec.add("RY", q, angle=Angle.feature(2 * q))
                spec.add("RY", q, angle=Angle.feature(2 * q + 1))
        for r, (p, d) in enumerate(pairs):
            spec.add("CRZ", p, d, angle=Angle.param(base + r))
        for c, (i, j) in enumerate(couplings):
            spec.add("IsingZZ", i, j, angle=Angle.feature(coupling_base + c, np.pi * config.isingzz_scale))
        for q in range(nq):
            spec.add("RZ", q, angle=Angle.param(base + N // 2 + 2 * q))
        for q in range(nq):
            spec.add("RY", q, angle=Angle.param(base + N // 2 + 2 * q + 1))
    return spec


def coupling_inputs(instance: Instance) -> np.ndarray:
    w = instance.travel
    wmax = float(w.max())
    N = instance.num_nodes - 1
    if wmax <= 0:
        return np.zeros(len(_couplings(N)))
    return np.array([w[i, j] / wmax for i, j in _couplings(N)])


def build_pqc(instance: Instance, config: CircuitConfig) -> CircuitSpec:
    """Circuit for one instance, with IsingZZ angles bound to pi * w_ij / w_max * scale."""
    N = instance.num_nodes - 1
    template = pqc_template(N, config)
    nq = N + 1
    cvals = coupling_inputs(instance)
    base = template.num_feature_slots - len(cvals)
    gates = []
    for g in template.gates:
        if g.kind == "IsingZZ" and g.angle.source == FEATURE:
            g = replace(g, angle=Angle.fixed(g.angle.scale * cvals[g.angle.index - base]))
        gates.append(g)
    return CircuitSpec(nq, gates, template.num_param_slots, base)


def _clamp_angle(x: float) -> float:
    return float(np.pi * np.clip(x, -1.0, 1.0))


def encode_features(instance: Instance, state: EnvState) -> np.ndarray:
    """Two RY angles per qubit: relative load then relative time."""
    veh = state.vehicle
    Q = instance.fleet.capacity
    T = instance.horizon if instance.horizon > 0 else 1.0
    out = np.empty(2 * instance.num_nodes)
    out[0] = _clamp_angle(veh.load / Q)
    out[1] = _clamp_angle(veh.clock / T)
    for nd in instance.nodes[1:]:
        out[2 * nd.id] = _clamp_angle((veh.load - nd.demand) / Q)
        out[2 * nd.id + 1] = _clamp_angle((veh.clock - nd.late_window) / T)
    return out


def state_flags(state: EnvState) -> np.ndarray:
    """At-depot flag for qubit 0, visited flags for the node qubits."""
    flags = np.asarray(state.visited, dtype=float).copy()
    flags[0] = float(state.vehicle.position == 0)
    return flags


class PQCNetwork:
    """PQC followed by ``q = W z + b`` over the N+1 qubit expectations."""

    kind = "pqc"

    def __init__(self, num_customers: int, config: CircuitConfig | None = None, rng=None, readout_scale: float = 0.1):
        self.config = config or CircuitConfig()
        self.num_customers = num_customers
        self.spec = pqc_template(num_customers, self.config)
        rng = np.random.default_rng(rng)
        nq = num_customers + 1
        self.theta = rng.uniform(-np.pi, np.pi, self.spec.num_param_slots)
        self.readout_weight = readout_scale * rng.standard_normal((nq, nq))
        self.readout_bias = np.zeros(nq)

    @property
    def num_actions(self) -> int:
        return self.num_customers + 1

    # parameters as a flat list of arrays, shared with the trainer
    def get_params(self) -> list[np.ndarray]:
        return [self.theta, self.readout_weight, self.readout_bias]

    def set_params(self, params) -> None:
        self.theta, self.readout_weight, self.readout_bias = (np.array(p, dtype=float) for p in params)

    def copy(self) -> "PQCNetwork":
        other = object.__new__(PQCNetwork)
        other.config = self.config
        other.num_customers = self.num_customers
        other.spec = self.spec
        other.set_params([p.copy() for p in self.get_params()])
        return other

    def inputs(self, instance: Instance, state: EnvState) -> np.ndarray:
        if instance.num_nodes != self.num_actions:
            raise InvalidArgumentError(
                f"network built for {self.num_actions} nodes, instance has {instance.num_nodes}"
            )
        parts = [encode_features(instance, state)]
        if self.config.encode_flags:
            parts.append(state_flags(state))
        parts.append(coupling_inputs(instance))
        return np.concatenate(parts)

    def expectations(self, X: np.ndarray) -> np.ndarray:
        return expectation_z(run_circuit(self.spec, self.theta, np.atleast_2d(X)))

    def q_batch(self, X: np.ndarray) -> np.ndarray:
        z = self.expectations(X)
        return z @ self.readout_weight.T + self.readout_bias

    def grad_batch(self, X: np.ndarray, dq: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Q-values and the gradient of ``sum(dq * q)`` w.r.t. (theta, W, b)."""
        z, jac = z_jacobian(self.spec, self.theta, np.atleast_2d(X))
        q = z @ self.readout_weight.T + self.readout_bias
        # dL/dz_i = sum_a dq_a W_ai
        dz = dq @ self.readout_weight
        g_theta = np.einsum("bi,bij->j", dz, jac)
        g_w = dq.T @ z
        g_b = dq.sum(0)
        return q, [g_theta, g_w, g_b]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "theta": self.theta.tolist(),
            "readout_weight": self.readout_weight.tolist(),
            "readout_bias": self.readout_bias.tolist(),
            "instance_size": self.num_actions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PQCNetwork":
        net = object.__new__(cls)
        net.config = CircuitConfig(**d["config"])
        net.num_customers = int(d["instance_size"]) - 1
        net.spec = pqc_template(net.num_customers, net.config)
        net.set_params([d["theta"], d["readout_weight"], d["readout_bias"]])
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"algo": "qdqn", **self.to_dict()}, fh)


def q_values(network: PQCNetwork, instance: Instance, state: EnvState) -> np.ndarray:
    return network.q_batch(network.inputs(instance, state)[None, :])[0]


def grad_q(network: PQCNetwork, instance: Instance, state: EnvState, action: int) -> dict:
    """Gradient of q_action w.r.t. theta, readout weight and readout bias."""
    if not 0 <= action < network.num_actions:
        raise InvalidArgumentError(f"action {action} out of range")
    dq = np.zeros((1, network.num_actions))
    dq[0, action] = 1.0
    _, (g_theta, g_w, g_b) = network.grad_batch(network.inputs(instance, state)[None, :], dq)
    return {"theta": g_theta, "readout_weight": g_w, "readout_bias": g_b}
