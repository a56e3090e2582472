"""Position-indexed QUBO for CPDPTW and its Pauli-Z form.

Binary ``x[i, t, k]`` says vehicle ``k`` visits customer ``i`` (1..N) at route
position ``t`` (1..T). Energy::

    sum_{k,t,i,j} w_ij x[i,t,k] x[j,t+1,k]                  travel between customers
  + lv * sum_i (sum_{k,t} x[i,t,k] - 1)^2                    visit every customer once
  + 2 lv * sum_{k,t} sum_{i<j} x[i,t,k] x[j,t,k]             at most one node per slot
  + lv * sum_{k,t} sum_j x[j,t+1,k] (1 - sum_i x[i,t,k])     no gaps inside a route
  + lc * (q_a + q_b - Q)^2 for two pickups in adjacent slots whose demand overflows
  + lw * [edge-implied earliest arrival exceeds the late window]
  + lp * (delivery at or before its pickup, or on another vehicle)

Depot legs are not part of the objective unless ``include_depot`` adds a
depot variable per slot, pinned to position 1 of every vehicle (the travel
term then charges the first leg). Capacity and window terms are
slack-free quadratic surrogates; ``decode_assignment`` reports the exact
breaches so candidates can be checked by enumeration.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from ..environment import DELIVERY, PICKUP, Instance
from ..errors import InfeasibleModelError, InvalidArgumentError


@dataclass(frozen=True)
class PenaltyWeights:
    lambda_visit: float
    lambda_capacity: float
    lambda_window: float
    lambda_precedence: float

    @classmethod
    def calibrated(cls, instance: Instance, num_steps: int) -> "PenaltyWeights":
        lam = 2.0 * float(instance.travel.max()) * num_steps
        lam = lam if lam > 0 else 1.0
        return cls(lam, lam, lam, lam)

    @classmethod
    def zero(cls) -> "PenaltyWeights":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass
class QuboModel:
    """``energy(x) = x^T quadratic x + linear . x + constant``.

    ``quadratic`` is symmetric with a zero diagonal, so a coupling ``J`` on a
    pair is stored as ``J/2`` in both triangles.
    """

    var_index: list[tuple[int, int, int]]
    quadratic: np.ndarray
    linear: np.ndarray
    constant: float
    penalties: PenaltyWeights
    num_steps: int = 0
    num_vehicles: int = 1
    instance: Instance | None = field(default=None, repr=False)
    include_depot: bool = False

    @property
    def num_vars(self) -> int:
        return len(self.var_index)

    def index_of(self, node: int, t: int, k: int) -> int:
        return self._lookup[(node, t, k)]

    def __post_init__(self):
        self._lookup = {v: a for a, v in enumerate(self.var_index)}

    def to_dict(self) -> dict:
        rows, cols = np.nonzero(np.triu(self.quadratic, 1))
        return {
            "num_vars": self.num_vars,
            "var_index": [list(v) for v in self.var_index],
            "quadratic": [[int(r), int(c), float(2 * self.quadratic[r, c])] for r, c in zip(rows, cols)],
            "linear": self.linear.tolist(),
            "constant": float(self.constant),
            "penalties": asdict(self.penalties),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "QuboModel":
        n = int(d["num_vars"])
        Q = np.zeros((n, n))
        for r, c, val in d["quadratic"]:
            Q[r, c] += val / 2
            Q[c, r] += val / 2
        var_index = [tuple(v) for v in d["var_index"]]
        T = max((v[1] for v in var_index), default=0)
        K = max((v[2] for v in var_index), default=-1) + 1
        depot = any(v[0] == 0 for v in var_index)
        return cls(var_index, Q, np.asarray(d["linear"], float), float(d["constant"]),
                   PenaltyWeights(**d["penalties"]), T, K, None, depot)


class _Builder:
    def __init__(self, n: int):
        self.Q = np.zeros((n, n))
        self.h = np.zeros(n)
        self.c = 0.0

    def pair(self, a: int, b: int, val: float) -> None:
        if a == b:
            self.h[a] += val
        else:
            self.Q[a, b] += val / 2
            self.Q[b, a] += val / 2

    def squared(self, idx: list[int], coeffs: list[float], target: float, weight: float) -> None:
        """weight * (sum c_a x_a - target)^2 expanded with x^2 = x."""
        for a, ca in zip(idx, coeffs):
            self.h[a] += weight * (ca * ca - 2 * target * ca)
        for (a, ca), (b, cb) in combinations(zip(idx, coeffs), 2):
            self.pair(a, b, 2 * weight * ca * cb)
        self.c += weight * target * target


def build_qubo(
    instance: Instance,
    num_steps: int | None = None,
    num_vehicles: int = 1,
    penalties: PenaltyWeights | None = None,
    include_depot: bool = False,
) -> QuboModel:
    N = instance.num_nodes - 1
    T = N if num_steps is None else int(num_steps)
    K = int(num_vehicles)
    if K < 1:
        raise InvalidArgumentError("need at least one vehicle")
    if T * K < N:
        raise InfeasibleModelError(f"T={T} positions x K={K} vehicles cannot host {N} customers")
    lam = penalties or PenaltyWeights.calibrated(instance, T)
    customers = list(range(1, N + 1))
    nodes = [0, *customers] if include_depot else customers
    if include_depot and T < N + 1:
        raise InfeasibleModelError(f"T={T} positions cannot host the depot and {N} customers")
    var_index = [(i, t, k) for k in range(K) for t in range(1, T + 1) for i in nodes]
    lookup = {v: a for a, v in enumerate(var_index)}

    def x(i, t, k):
        return lookup[(i, t, k)]

    b = _Builder(len(var_index))
    w = instance.travel
    late = instance.late_windows
    demand = instance.demands
    cap = instance.fleet.capacity
    kind = [nd.kind for nd in instance.nodes]

    for k in range(K):
        for t in range(1, T):
            for i in nodes:
                for j in nodes:
                    if i != j:
                        b.pair(x(i, t, k), x(j, t + 1, k), w[i, j])

    for i in customers:
        idx = [x(i, t, k) for k in range(K) for t in range(1, T + 1)]
        b.squared(idx, [1.0] * len(idx), 1.0, lam.lambda_visit)
    if include_depot:
        for k in range(K):
            idx = [x(0, t, k) for t in range(1, T + 1)]
            b.squared(idx, [1.0] * T, 1.0, lam.lambda_visit)
            for t in range(2, T + 1):
                b.pair(x(0, t, k), x(0, t, k), lam.lambda_visit)

    for k in range(K):
        for t in range(1, T + 1):
            for i, j in combinations(nodes, 2):
                b.pair(x(i, t, k), x(j, t, k), 2 * lam.lambda_visit)
        for t in range(1, T):
            for j in nodes:
                b.pair(x(j, t + 1, k), x(j, t + 1, k), lam.lambda_visit)
                for i in nodes:
                    b.pair(x(i, t, k), x(j, t + 1, k), -lam.lambda_visit)

    pickups = [i for i in customers if kind[i] == PICKUP]
    for k in range(K):
        for t in range(1, T):
            for a in pickups:
                for c in pickups:
                    over = int(demand[a] + demand[c]) - cap
                    if a != c and over > 0:
                        b.pair(x(a, t, k), x(c, t + 1, k), lam.lambda_capacity * over * over)

    for k in range(K):
        for t in range(1, T + 1):
            for j in customers:
                if w[0, j] > late[j]:
                    b.pair(x(j, t, k), x(j, t, k), lam.lambda_window)
                if t < T:
                    for i in customers:
                        if i != j and w[0, i] + w[i, j] > late[j]:
                            b.pair(x(i, t, k), x(j, t + 1, k), lam.lambda_window)

    for p, d in instance.pairs():
        for k in range(K):
            for t in range(1, T + 1):
                for t2 in range(1, t + 1):
                    b.pair(x(d, t2, k), x(p, t, k), lam.lambda_precedence)
            for k2 in range(K):
                if k2 != k:
                    for t in range(1, T + 1):
                        for t2 in range(1, T + 1):
                            b.pair(x(p, t, k), x(d, t2, k2), lam.lambda_precedence)

    return QuboModel(var_index, b.Q, b.h, b.c, lam, T, K, instance, include_depot)


def _as_bits(model: QuboModel, assignment) -> np.ndarray:
    x = np.asarray(assignment, dtype=float)
    if x.shape[-1] != model.num_vars:
        raise InvalidArgumentError(f"assignment length {x.shape[-1]} != {model.num_vars} variables")
    return x


def qubo_energy(model: QuboModel, assignment) -> float | np.ndarray:
    """Energy of one bit vector, or of each row of a 2-D array."""
    x = _as_bits(model, assignment)
    val = np.einsum("...a,ab,...b->...", x, model.quadratic, x) + x @ model.linear + model.constant
    return float(val) if np.ndim(val) == 0 else val


def all_assignments(num_vars: int) -> np.ndarray:
    """Rows are bit vectors; row ``r`` has bit ``a`` equal to bit ``a`` of ``r``."""
    r = np.arange(2**num_vars)
    return ((r[:, None] >> np.arange(num_vars)[None, :]) & 1).astype(float)


@dataclass
class DecodedAssignment:
    routes: list[list[int]]
    violations: dict
    feasible: bool


def decode_assignment(model: QuboModel, assignment) -> DecodedAssignment:
    """Read routes slot by slot and count exact constraint breaches."""
    x = _as_bits(model, assignment)
    inst = model.instance
    N = max(v[0] for v in model.var_index)
    T, K = model.num_steps, model.num_vehicles
    grid = np.zeros((K, T, N + 1), dtype=int)
    for a, (i, t, k) in enumerate(model.var_index):
        grid[k, t - 1, i] = int(round(x[a]))
    viol = {"visit": 0, "slot": 0, "gap": 0, "capacity": 0, "window": 0, "precedence": 0, "depot": 0}
    counts = grid.sum(axis=(0, 1))[1:]
    viol["visit"] = int(np.sum(counts != 1))
    viol["slot"] = int(np.sum(grid.sum(axis=2) > 1))
    if model.include_depot:
        for k in range(K):
            viol["depot"] += int(list(np.flatnonzero(grid[k, :, 0])) != [0])
        grid[:, :, 0] = 0
    routes, where = [], {}
    for k in range(K):
        route, seen_gap = [], False
        first = 1 if model.include_depot else 0
        for t in range(first, T):
            chosen = np.flatnonzero(grid[k, t])
            if len(chosen) == 0:
                seen_gap = True
                continue
            if seen_gap:
                viol["gap"] += 1
                seen_gap = False
            for i in chosen:
                route.append(int(i))
                where.setdefault(int(i), (k, t))
        routes.append(route)
    if inst is not None:
        demand, late, w = inst.demands, inst.late_windows, inst.travel
        cap = inst.fleet.capacity
        for route in routes:
            load, clock, pos = 0, 0.0, 0
            for i in route:
                load += int(demand[i])
                clock += w[pos, i]
                pos = i
                if inst.nodes[i].kind == PICKUP and load > cap:
                    viol["capacity"] += 1
                if clock > late[i]:
                    viol["window"] += 1
        for p, d in inst.pairs():
            if p in where and d in where:
                (kp, tp), (kd, td) = where[p], where[d]
                if kp != kd or td <= tp:
                    viol["precedence"] += 1
            elif d in where and p not in where:
                viol["precedence"] += 1
    feasible = all(v == 0 for v in viol.values())
    return DecodedAssignment([[0, *r, 0] for r in routes if r], viol, feasible)


# ---------------------------------------------------------------------------
# Pauli-Z form


@dataclass
class PauliHamiltonian:
    """Sum of ``coefficient * prod_{q in support} Z_q``; the empty support is a constant."""

    num_qubits: int
    terms: list[tuple[float, frozenset]]

    def diagonal(self) -> np.ndarray:
        """Energy of every computational basis state (little-endian index)."""
        idx = np.arange(2**self.num_qubits)
        out = np.zeros(2**self.num_qubits)
        for coef, support in self.terms:
            parity = np.zeros_like(idx)
            for q in support:
                parity ^= (idx >> q) & 1
            out += coef * (1 - 2 * parity)
        return out

    def energy(self, spins) -> float:
        """Energy of a +-1 spin string (spin +1 <-> bit 0)."""
        s = np.asarray(spins, dtype=float)
        return float(sum(c * np.prod([s[q] for q in sup]) for c, sup in self.terms))

    def max_abs_coefficient(self) -> float:
        vals = [abs(c) for c, sup in self.terms if sup]
        return max(vals) if vals else 0.0


def to_ising(model: QuboModel, tol: float = 0.0) -> PauliHamiltonian:
    """Substitute ``x = (1 - z) / 2``."""
    n = model.num_vars
    const = model.constant
    lin = np.zeros(n)
    terms: list[tuple[float, frozenset]] = []
    for a in range(n):
        h = model.linear[a]
        const += h / 2
        lin[a] -= h / 2
    for a, b in combinations(range(n), 2):
        J = 2 * model.quadratic[a, b]
        if J == 0:
            continue
        const += J / 4
        lin[a] -= J / 4
        lin[b] -= J / 4
        terms.append((J / 4, frozenset((a, b))))
    terms = [(const, frozenset())] + [(lin[a], frozenset((a,))) for a in range(n) if abs(lin[a]) > tol] + [
        t for t in terms if abs(t[0]) > tol
    ]
    return PauliHamiltonian(n, terms)


def bits_to_spins(bits) -> np.ndarray:
    return 1 - 2 * np.asarray(bits, dtype=float)
