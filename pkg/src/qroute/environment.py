"""CPDPTW instances and the routing MDP.

Node layout: depot at index 0, request ``r`` (0-based) owns pickup ``2r + 1``
and delivery ``2r + 2``. Times are minutes, coordinates kilometres, demands
integer units.

Vehicles are dispatched one after another. Choosing the depot closes the
active trip; if requests remain, the next vehicle starts with clock 0 (the last
vehicle starts a fresh trip once the fleet is exhausted).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IllegalActionError,
    InfeasibleFleetError,
    InvalidArgumentError,
    NoFeasibleActionError,
)

DEPOT, PICKUP, DELIVERY = "depot", "pickup", "delivery"


@dataclass(frozen=True)
class RequestNode:
    id: int
    kind: str
    coord: tuple[float, float]
    demand: int = 0
    late_window: float | None = None
    partner: int | None = None


@dataclass(frozen=True)
class FleetSpec:
    num_vehicles: int = 1
    capacity: int = 5
    speed: float = 20.0  # m/s

    def __post_init__(self):
        if self.num_vehicles < 1:
            raise InvalidArgumentError("fleet needs at least one vehicle")
        if self.speed <= 0:
            raise InvalidArgumentError("speed must be positive")


@dataclass(frozen=True)
class GenParams:
    coord_range: tuple[float, float] = (0.0, 1.0)
    demand_support: tuple[int, int] = (1, 3)
    window_range: tuple[float, float] = (20.0, 40.0)


@dataclass(frozen=True)
class RewardParams:
    alpha1: float = 0.6
    alpha2: float = 0.05
    # per-violation charge used when capacity/precedence masks are relaxed
    violation_penalty: float = 0.0

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.violation_penalty < 0:
            raise InvalidArgumentError("reward coefficients must be nonnegative")


@dataclass(frozen=True)
class MaskConfig:
    mask_revisit: bool = True
    mask_capacity: bool = True
    mask_precedence: bool = True
    relax_time_windows: bool = True

    @classmethod
    def none(cls) -> "MaskConfig":
        return cls(False, False, False, True)

    @classmethod
    def relaxed(cls) -> "MaskConfig":
        """Only revisits are masked; capacity and precedence become penalties."""
        return cls(True, False, False, True)

    @property
    def any(self) -> bool:
        return self.mask_revisit or self.mask_capacity or self.mask_precedence


@dataclass(frozen=True)
class Instance:
    nodes: tuple[RequestNode, ...]
    fleet: FleetSpec
    travel: np.ndarray
    horizon: float
    seed: int | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_requests(self) -> int:
        return (len(self.nodes) - 1) // 2

    @property
    def demands(self) -> np.ndarray:
        return np.array([nd.demand for nd in self.nodes], dtype=int)

    @property
    def late_windows(self) -> np.ndarray:
        return np.array([np.inf if nd.late_window is None else nd.late_window for nd in self.nodes])

    def pickups(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.kind == PICKUP]

    def deliveries(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.kind == DELIVERY]

    def pairs(self) -> list[tuple[int, int]]:
        return [(p, self.nodes[p].partner) for p in self.pickups()]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": nd.id,
                    "kind": nd.kind,
                    "coord": list(nd.coord),
                    "demand": nd.demand,
                    "late_window_min": nd.late_window,
                    "partner": nd.partner,
                }
                for nd in self.nodes
            ],
            "fleet": {
                "num_vehicles": self.fleet.num_vehicles,
                "capacity": self.fleet.capacity,
                "speed_mps": self.fleet.speed,
            },
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        nodes = tuple(
            RequestNode(
                id=int(n["id"]),
                kind=n["kind"],
                coord=(float(n["coord"][0]), float(n["coord"][1])),
                demand=int(n["demand"]),
                late_window=None if n.get("late_window_min") is None else float(n["late_window_min"]),
                partner=None if n.get("partner") is None else int(n["partner"]),
            )
            for n in d["nodes"]
        )
        f = d["fleet"]
        fleet = FleetSpec(int(f["num_vehicles"]), int(f["capacity"]), float(f["speed_mps"]))
        return make_instance(nodes, fleet, seed=d.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


def travel_time_matrix(coords: np.ndarray, speed: float) -> np.ndarray:
    """Minutes between every pair of coordinates (km) at ``speed`` m/s."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InvalidArgumentError(f"expected (n, 2) coordinates, got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise InvalidArgumentError("non-finite coordinate")
    diff = coords[:, None, :] - coords[None, :, :]
    km = np.sqrt((diff**2).sum(-1))
    return km * 1000.0 / (speed * 60.0)


def make_instance(nodes: Sequence[RequestNode], fleet: FleetSpec, seed: int | None = None) -> Instance:
    nodes = tuple(nodes)
    _validate_nodes(nodes, fleet)
    coords = np.array([nd.coord for nd in nodes], dtype=float).reshape(-1, 2)
    travel = travel_time_matrix(coords, fleet.speed)
    windows = [nd.late_window for nd in nodes if nd.late_window is not None]
    horizon = (max(windows) if windows else 0.0) + float(travel.max())
    return Instance(nodes, fleet, travel, horizon, seed)


def _validate_nodes(nodes: tuple[RequestNode, ...], fleet: FleetSpec) -> None:
    if not nodes or nodes[0].kind != DEPOT:
        raise InvalidArgumentError("node 0 must be the depot")
    if len(nodes) % 2 != 1:
        raise InvalidArgumentError("expected 1 + 2*n_requests nodes")
    for i, nd in enumerate(nodes):
        if nd.id != i:
            raise InvalidArgumentError(f"node ids must be positional, got {nd.id} at {i}")
        if nd.kind == DEPOT:
            if i != 0:
                raise InvalidArgumentError("only node 0 may be a depot")
            continue
        if nd.partner is None or nodes[nd.partner].partner != i:
            raise InvalidArgumentError(f"node {i} has no symmetric partner")
        if nd.kind == PICKUP:
            if nd.demand <= 0:
                raise InvalidArgumentError(f"pickup {i} needs positive demand")
            if nd.demand > fleet.capacity:
                raise InfeasibleFleetError(f"pickup {i} demand {nd.demand} exceeds capacity {fleet.capacity}")
        elif nd.kind == DELIVERY:
            if nd.demand != -nodes[nd.partner].demand:
                raise InvalidArgumentError(f"delivery {i} demand must negate its pickup's")
        else:
            raise InvalidArgumentError(f"unknown node kind {nd.kind!r}")


def generate_instance(
    seed: int,
    n_requests: int,
    fleet: FleetSpec | None = None,
    gen: GenParams | None = None,
) -> Instance:
    """Draw a random instance; identical ``seed`` gives an identical instance."""
    fleet = fleet or FleetSpec()
    gen = gen or GenParams()
    if n_requests < 0:
        raise InvalidArgumentError("n_requests must be >= 0")
    if fleet.capacity < gen.demand_support[1]:
        raise InfeasibleFleetError(
            f"capacity {fleet.capacity} below the largest possible demand {gen.demand_support[1]}"
        )
    rng = np.random.default_rng(seed)
    lo, hi = gen.coord_range
    coords = rng.uniform(lo, hi, size=(1 + 2 * n_requests, 2))
    demands = rng.integers(gen.demand_support[0], gen.demand_support[1] + 1, size=n_requests)
    windows = np.sort(rng.uniform(*gen.window_range, size=(n_requests, 2)), axis=1)

    nodes = [RequestNode(0, DEPOT, (float(coords[0, 0]), float(coords[0, 1])))]
    for r in range(n_requests):
        p, d = 2 * r + 1, 2 * r + 2
        q = int(demands[r])
        nodes.append(RequestNode(p, PICKUP, tuple(map(float, coords[p])), q, float(windows[r, 0]), d))
        nodes.append(RequestNode(d, DELIVERY, tuple(map(float, coords[d])), -q, float(windows[r, 1]), p))
    return make_instance(nodes, fleet, seed=seed)


# ---------------------------------------------------------------------------
# MDP


@dataclass(frozen=True)
class VehicleState:
    load: int = 0
    clock: float = 0.0
    position: int = 0
    arrival_times: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True)
class EnvState:
    instance: Instance = field(repr=False)
    active_vehicle: int
    vehicles: tuple[VehicleState, ...]
    visited: tuple[bool, ...]
    step_count: int = 0
    trips: tuple[tuple[int, ...], ...] = ((0,),)

    @property
    def vehicle(self) -> VehicleState:
        return self.vehicles[self.active_vehicle]

    @property
    def done(self) -> bool:
        return all(self.visited[1:]) and self.vehicle.position == 0

    def routes(self) -> list[list[int]]:
        """Trips driven so far; an empty trailing trip is dropped."""
        return [list(t) for t in self.trips if len(t) > 1]


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    done: bool
    info: dict


class RoutingEnv:
    """Masked CPDPTW MDP. States are immutable; ``step`` returns a new one."""

    def __init__(
        self,
        instance: Instance,
        reward_params: RewardParams | None = None,
        mask_config: MaskConfig | None = None,
    ):
        self.instance = instance
        self.reward_params = reward_params or RewardParams()
        self.mask_config = mask_config or MaskConfig()
        self._demand = instance.demands
        self._late = instance.late_windows
        self._partner = [nd.partner for nd in instance.nodes]
        self._is_pickup = [nd.kind == PICKUP for nd in instance.nodes]

    @property
    def num_actions(self) -> int:
        return self.instance.num_nodes

    def reset(self) -> EnvState:
        inst = self.instance
        return EnvState(
            instance=inst,
            active_vehicle=0,
            vehicles=tuple(VehicleState() for _ in range(inst.fleet.num_vehicles)),
            visited=(False,) * inst.num_nodes,
            step_count=0,
            trips=((0,),),
        )

    def open_requests(self, state: EnvState) -> list[int]:
        """Pickups served on the current trip whose delivery is still pending."""
        trip = state.trips[-1]
        return [i for i in trip if self._is_pickup[i] and not state.visited[self._partner[i]]]

    def feasible_actions(self, state: EnvState) -> np.ndarray:
        if state.done:
            raise NoFeasibleActionError("state is terminal")
        cfg = self.mask_config
        veh = state.vehicle
        n = self.num_actions
        mask = np.ones(n, dtype=bool)
        for i in range(1, n):
            if cfg.mask_revisit and state.visited[i]:
                mask[i] = False
            elif cfg.mask_capacity and veh.load + self._demand[i] > self.instance.fleet.capacity:
                mask[i] = False
            elif cfg.mask_precedence and not self._is_pickup[i] and not state.visited[self._partner[i]]:
                mask[i] = False
        if cfg.any:
            # no empty trips, and no returning with cargo aboard
            depot_ok = len(state.trips[-1]) > 1
            if cfg.mask_capacity and veh.load > 0:
                depot_ok = False
            if cfg.mask_precedence and self.open_requests(state):
                depot_ok = False
            mask[0] = depot_ok
        return mask

    def step(self, state: EnvState, action: int) -> StepOutcome:
        inst = self.instance
        if not 0 <= action < self.num_actions:
            raise InvalidArgumentError(f"action {action} out of range")
        if state.done:
            raise NoFeasibleActionError("episode already finished")
        if self.mask_config.any and not self.feasible_actions(state)[action]:
            raise IllegalActionError(f"action {action} is masked in the current state")

        veh = state.vehicle
        rp = self.reward_params
        if action == veh.position:
            # zero-length move: nothing happens besides the step counter
            info = {"travel": 0.0, "delay": 0.0, "violations": 0}
            return StepOutcome(replace(state, step_count=state.step_count + 1), 0.0, False, info)

        travel = float(inst.travel[veh.position, action])
        arrival = veh.clock + travel
        delay = 0.0
        violations = 0
        if action != 0:
            delay = max(arrival - self._late[action], 0.0)
            new_load = veh.load + int(self._demand[action])
            if self._is_pickup[action]:
                violations += int(new_load > inst.fleet.capacity)
            else:
                violations += int(not state.visited[self._partner[action]])
            if not self.mask_config.relax_time_windows:
                violations += int(delay > 0)
        reward = -(rp.alpha1 * travel + rp.alpha2 * delay + rp.violation_penalty * violations)

        vehicles = list(state.vehicles)
        visited = list(state.visited)
        trips = list(state.trips)
        active = state.active_vehicle
        if action == 0:
            vehicles[active] = VehicleState(0, arrival, 0, veh.arrival_times)
            trips[-1] = trips[-1] + (0,)
            if not all(visited[1:]):
                active = min(active + 1, len(vehicles) - 1)
                v = vehicles[active]
                vehicles[active] = VehicleState(0, 0.0, 0, v.arrival_times)
                trips.append((0,))
        else:
            visited[action] = True
            vehicles[active] = VehicleState(
                veh.load + int(self._demand[action]),
                arrival,
                action,
                veh.arrival_times + ((action, arrival),),
            )
            trips[-1] = trips[-1] + (action,)
        nxt = EnvState(inst, active, tuple(vehicles), tuple(visited), state.step_count + 1, tuple(trips))
        info = {"travel": travel, "delay": delay, "violations": violations}
        return StepOutcome(nxt, reward, nxt.done, info)


def reset(instance: Instance, reward_params: RewardParams | None = None, mask_config: MaskConfig | None = None):
    return RoutingEnv(instance, reward_params, mask_config).reset()


@dataclass(frozen=True)
class CostBreakdown:
    travel: float
    delay: float
    cost: float
    violations: dict
    feasible: bool


def route_cost(
    instance: Instance,
    routes: Iterable[Sequence[int]],
    reward_params: RewardParams | None = None,
    mask_config: MaskConfig | None = None,
) -> CostBreakdown:
    """Eq-7 style cost of a set of depot-to-depot trips, each starting at clock 0.

    Constraint breaches are counted in ``violations`` rather than raised.
    """
    rp = reward_params or RewardParams()
    relax = True if mask_config is None else mask_config.relax_time_windows
    w = instance.travel
    demand = instance.demands
    late = instance.late_windows
    cap = instance.fleet.capacity
    seen: set[int] = set()
    counts = {"revisit": 0, "capacity": 0, "precedence": 0, "window": 0, "unvisited": 0, "open_route": 0}
    total_travel = total_delay = penalised = 0.0
    for route in routes:
        route = list(route)
        if not route:
            continue
        if route[0] != 0 or route[-1] != 0:
            counts["open_route"] += 1
        clock, load = 0.0, 0
        for a, b in zip(route[:-1], route[1:]):
            if a == b:
                continue
            leg = float(w[a, b])
            clock += leg
            total_travel += leg
            if b == 0:
                load = 0
                continue
            d = max(clock - late[b], 0.0)
            total_delay += d
            if b in seen:
                counts["revisit"] += 1
            node = instance.nodes[b]
            load += int(demand[b])
            if node.kind == PICKUP and load > cap:
                counts["capacity"] += 1
                penalised += 1
            if node.kind == DELIVERY and node.partner not in seen:
                counts["precedence"] += 1
                penalised += 1
            if d > 0:
                counts["window"] += 1
                if not relax:
                    penalised += 1
            seen.add(b)
    counts["unvisited"] = sum(1 for i in range(1, instance.num_nodes) if i not in seen)
    cost = rp.alpha1 * total_travel + rp.alpha2 * total_delay + rp.violation_penalty * penalised
    hard = ("revisit", "capacity", "precedence", "unvisited", "open_route")
    return CostBreakdown(total_travel, total_delay, cost, counts, all(counts[k] == 0 for k in hard))


def rollout(env: RoutingEnv, actions: Iterable[int]) -> tuple[EnvState, float]:
    """Replay ``actions`` from reset; returns the final state and summed negated reward."""
    state = env.reset()
    total = 0.0
    for a in actions:
        out = env.step(state, a)
        total -= out.reward
        state = out.next_state
    return state, total


def max_episode_steps(instance: Instance) -> int:
    return 2 * instance.num_nodes * instance.fleet.num_vehicles


def write_dataset(instances: Iterable[Instance], path) -> int:
    count = 0
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")
            count += 1
    return count


def read_dataset(path) -> list[Instance]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Instance.from_json(line))
    return out


def load_instance(path) -> Instance:
    """Read one instance from a JSON file, or the first line of a JSON-lines file."""
    with open(path) as fh:
        text = fh.read().strip()
    try:
        return Instance.from_json(text)
    except json.JSONDecodeError:
        return Instance.from_json(text.splitlines()[0])


def dataset_instances(seed: int, n_requests: int, count: int, fleet: FleetSpec | None = None) -> list[Instance]:
    """``count`` instances whose seeds are drawn from one master seed."""
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32) if count else []
    return [generate_instance(int(s), n_requests, fleet) for s in seeds]

