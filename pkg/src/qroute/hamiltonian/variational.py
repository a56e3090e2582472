"""Alternating cost/mixer ansatz tuned by a derivative-free optimizer.

The state is ``|+>^n`` followed by ``depth`` rounds of ``exp(-i gamma H_C)``
(exact, since ``H_C`` is Z-diagonal) and ``prod_q RX(2 beta)``. The energy is
read off exactly from the statevector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..errors import CapacityError, InvalidArgumentError
from ..quantum import MAX_UNITARY_QUBITS, Angle, CircuitSpec, run_circuit
from .qubo import PauliHamiltonian


@dataclass(frozen=True)
class VariationalParams:
    gamma: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        if len(self.gamma) != len(self.beta):
            raise InvalidArgumentError("gamma and beta need one entry per layer")

    @property
    def depth(self) -> int:
        return len(self.gamma)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.beta])


@dataclass(frozen=True)
class OptimizerConfig:
    max_evaluations: int = 500
    restarts: int = 3
    rhobeg: float = 0.5
    tol: float = 1e-6
    seed: int = 0


@dataclass
class VariationalResult:
    params: VariationalParams
    energy: float
    bitstring: np.ndarray
    converged: bool
    initial_energy: float
    evaluations: int
    # incumbent energy after every evaluation
    trace: list[float] = field(default_factory=list)


def qaoa_circuit(hamiltonian: PauliHamiltonian, depth: int, scale: float = 1.0) -> CircuitSpec:
    """Parameters ``[gamma_1..gamma_p, beta_1..beta_p]``; cost angles are multiplied by ``scale``."""
    n = hamiltonian.num_qubits
    spec = CircuitSpec(n, num_param_slots=2 * depth)
    for q in range(n):
        spec.add("H", q)
    for layer in range(depth):
        for coef, support in hamiltonian.terms:
            support = sorted(support)
            a = 2 * coef * scale
            if len(support) == 0:
                spec.add("GPhase", angle=Angle.param(layer, -coef * scale), label="cost")
            elif len(support) == 1:
                spec.add("RZ", support[0], angle=Angle.param(layer, a), label="cost")
            elif len(support) == 2:
                spec.add("IsingZZ", *support, angle=Angle.param(layer, a), label="cost")
            else:
                raise InvalidArgumentError("cost layer supports at most two-body terms")
        for q in range(n):
            spec.add("RX", q, angle=Angle.param(depth + layer, 2.0), label="mixer")
    return spec


def variational_solve(
    hamiltonian: PauliHamiltonian,
    depth: int = 1,
    config: OptimizerConfig | None = None,
) -> VariationalResult:
    cfg = config or OptimizerConfig()
    n = hamiltonian.num_qubits
    if n > MAX_UNITARY_QUBITS:
        raise CapacityError(f"{n} qubits exceed the limit {MAX_UNITARY_QUBITS}")
    if depth < 1:
        raise InvalidArgumentError("depth must be >= 1")
    # normalise so the cost angles live on a unit scale
    scale = hamiltonian.max_abs_coefficient() or 1.0
    spec = qaoa_circuit(hamiltonian, depth, 1.0 / scale)
    diag = hamiltonian.diagonal()

    best = {"x": None, "e": np.inf}
    trace: list[float] = []

    def energy(x):
        psi = run_circuit(spec, x)
        e = float(np.abs(psi) ** 2 @ diag)
        if e < best["e"]:
            best["x"], best["e"] = np.array(x, dtype=float), e
        trace.append(best["e"])
        return e

    rng = np.random.default_rng(cfg.seed)
    starts = [np.concatenate([np.full(depth, 0.1), np.full(depth, np.pi / 8)])]
    for _ in range(max(cfg.restarts, 1) - 1):
        starts.append(np.concatenate([rng.uniform(0, np.pi, depth), rng.uniform(0, np.pi / 2, depth)]))
    initial_energy = energy(starts[0])
    per_start = max((cfg.max_evaluations - 1) // len(starts), 2 * depth + 2)
    converged = False
    for x0 in starts:
        if len(trace) >= cfg.max_evaluations:
            break
        budget = min(per_start, cfg.max_evaluations - len(trace))
        if budget < 2 * depth + 2:
            break
        res = minimize(energy, x0, method="COBYLA",
                       options={"maxiter": budget, "rhobeg": cfg.rhobeg, "tol": cfg.tol})
        converged = converged or bool(res.success)

    x = best["x"]
    psi = run_circuit(spec, x)
    probs = np.abs(psi) ** 2
    likely = np.flatnonzero(probs >= 1.0 / probs.size)
    pick = likely[np.argmin(diag[likely])] if len(likely) else int(np.argmax(probs))
    bits = (int(pick) >> np.arange(n)) & 1
    params = VariationalParams(tuple(x[:depth] / scale), tuple(x[depth:]))
    return VariationalResult(params, best["e"], bits, converged, initial_energy, len(trace), trace)
