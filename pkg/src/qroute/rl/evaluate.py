"""Greedy policies and evaluation statistics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..environment import Instance, MaskConfig, RewardParams, RoutingEnv, max_episode_steps, route_cost
from .oracle import MAX_ORACLE_REQUESTS, brute_force_solve


class RandomFeasiblePolicy:
    """Uniform choice among unmasked actions; reseeded per evaluated instance."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, index: int) -> None:
        self.rng = np.random.default_rng([self.seed, index])

    def __call__(self, env, state, mask) -> int:
        return int(self.rng.choice(np.flatnonzero(mask)))


class GreedyQPolicy:
    def __init__(self, network):
        self.network = network

    def __call__(self, env, state, mask) -> int:
        q = self.network.q_batch(self.network.inputs(env.instance, state)[None, :])[0]
        return masked_argmax(q, mask)


class OraclePolicy:
    """Replays the brute-force optimum of whichever instance it is asked about."""

    def __init__(self, reward_params: RewardParams | None = None):
        self.reward_params = reward_params
        self._plans: dict[int, list[int]] = {}

    def __call__(self, env, state, mask) -> int:
        key = id(env.instance)
        if key not in self._plans:
            routes, _ = brute_force_solve(env.instance, self.reward_params)
            self._plans[key] = [v for r in routes for v in r[1:]]
        return self._plans[key][state.step_count]


def masked_argmax(values: np.ndarray, mask: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, values, -np.inf)))


def run_episode(env: RoutingEnv, policy, max_steps: int | None = None):
    """Roll ``policy`` to termination; returns (routes, summed cost)."""
    state = env.reset()
    limit = max_steps or max_episode_steps(env.instance)
    total = 0.0
    while not state.done and state.step_count < limit:
        mask = env.feasible_actions(state)
        out = env.step(state, policy(env, state, mask))
        total -= out.reward
        state = out.next_state
    return state.routes(), total


@dataclass
class EvalResult:
    costs: list[float]
    gaps: list[float | None]
    feasible: list[bool]
    stats: dict = field(default_factory=dict)


def summarize(values) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"count": 0, "median": None, "q1": None, "q3": None, "mean": None, "min": None, "max": None}
    a = np.asarray(vals, dtype=float)
    return {
        "count": len(vals),
        "median": float(np.median(a)),
        "q1": float(np.percentile(a, 25)),
        "q3": float(np.percentile(a, 75)),
        "mean": float(a.mean()),
        "min": float(a.min()),
        "max": float(a.max()),
    }


def evaluate(policy, instances, reward_params: RewardParams | None = None, with_oracle: bool = True) -> EvalResult:
    """Greedy, fully masked rollouts; gap = cost / optimum - 1 where the oracle applies."""
    rp = reward_params or RewardParams()
    costs, gaps, feas = [], [], []
    for i, inst in enumerate(instances):
        if hasattr(policy, "reset"):
            policy.reset(i)
        env = RoutingEnv(inst, rp, MaskConfig())
        routes, cost = run_episode(env, policy)
        br = route_cost(inst, routes, rp)
        costs.append(cost)
        feas.append(br.feasible)
        gap = None
        if with_oracle and inst.n_requests <= MAX_ORACLE_REQUESTS:
            _, opt = brute_force_solve(inst, rp)
            gap = cost / opt - 1.0 if opt > 0 else 0.0
        gaps.append(gap)
    res = EvalResult(costs, gaps, feas)
    res.stats = {"cost": summarize(costs), "gap": summarize(gaps)}
    return res
