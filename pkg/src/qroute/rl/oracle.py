"""Exact solver for small instances.

Two enumerators are kept on purpose: a depth-first search with incremental
costs (used by ``brute_force_solve``) and a permutation/split enumerator that
scores candidates through ``route_cost``. Tests check that they agree.
"""
from __future__ import annotations

import itertools

from ..environment import DELIVERY, PICKUP, Instance, RewardParams, route_cost
from ..errors import CapacityError

MAX_ORACLE_REQUESTS = 4


def _check(instance: Instance) -> None:
    if instance.n_requests > MAX_ORACLE_REQUESTS:
        raise CapacityError(
            f"exact search supports at most {MAX_ORACLE_REQUESTS} requests, got {instance.n_requests}"
        )


def brute_force_solve(instance: Instance, reward_params: RewardParams | None = None):
    """Minimum-cost trip set over all precedence- and capacity-valid sequences.

    Trips return to the depot only with an empty vehicle and every trip starts
    its clock at zero, matching the environment's dispatch rule.
    Returns ``(routes, cost)``.
    """
    _check(instance)
    rp = reward_params or RewardParams()
    n = instance.num_nodes
    if n == 1:
        return [], 0.0
    w = instance.travel
    late = instance.late_windows
    demand = instance.demands
    kind = [nd.kind for nd in instance.nodes]
    partner = [nd.partner for nd in instance.nodes]
    cap = instance.fleet.capacity
    best = [float("inf"), None]
    visited = [False] * n
    path: list[int] = [0]

    def dfs(pos: int, clock: float, load: int, aboard: int, served: int, cost: float, trip_len: int):
        if cost >= best[0]:
            return
        if served == n - 1 and pos == 0:
            best[0], best[1] = cost, list(path)
            return
        for j in range(1, n):
            if visited[j]:
                continue
            if kind[j] == PICKUP and load + demand[j] > cap:
                continue
            if kind[j] == DELIVERY and not visited[partner[j]]:
                continue
            arrival = clock + w[pos, j]
            step = rp.alpha1 * w[pos, j] + rp.alpha2 * max(arrival - late[j], 0.0)
            visited[j] = True
            path.append(j)
            dfs(j, arrival, load + demand[j], aboard + (1 if kind[j] == PICKUP else -1),
                served + 1, cost + step, trip_len + 1)
            path.pop()
            visited[j] = False
        if pos != 0 and aboard == 0 and trip_len > 0:
            path.append(0)
            dfs(0, 0.0, 0, 0, served, cost + rp.alpha1 * w[pos, 0], 0)
            path.pop()

    dfs(0, 0.0, 0, 0, 0, 0.0, 0)
    return split_routes(best[1]), best[0]


def split_routes(sequence: list[int]) -> list[list[int]]:
    """Cut a depot-delimited node sequence into depot-to-depot trips."""
    routes, current = [], [0]
    for node in sequence[1:]:
        current.append(node)
        if node == 0:
            routes.append(current)
            current = [0]
    return routes


def enumerate_candidates(instance: Instance):
    """Every valid trip set, built from node permutations and depot splits."""
    _check(instance)
    customers = list(range(1, instance.num_nodes))
    if not customers:
        yield []
        return
    demand = instance.demands
    cap = instance.fleet.capacity
    for order in itertools.permutations(customers):
        pos = {v: k for k, v in enumerate(order)}
        if any(pos[p] > pos[d] for p, d in instance.pairs()):
            continue
        load, ok, cut_points = 0, True, []
        for k, v in enumerate(order):
            load += int(demand[v])
            if load > cap:
                ok = False
                break
            if load == 0 and k < len(order) - 1:
                cut_points.append(k + 1)
        if not ok:
            continue
        for r in range(len(cut_points) + 1):
            for cuts in itertools.combinations(cut_points, r):
                bounds = [0, *cuts, len(order)]
                yield [[0, *order[a:b], 0] for a, b in zip(bounds[:-1], bounds[1:])]


def enumerate_optimum(instance: Instance, reward_params: RewardParams | None = None):
    best_cost, best_routes = float("inf"), None
    for routes in enumerate_candidates(instance):
        c = route_cost(instance, routes, reward_params).cost
        if c < best_cost:
            best_cost, best_routes = c, routes
    return best_routes, (0.0 if best_routes == [] else best_cost)
