"""Deep Q-learning with prioritized replay, soft target updates and optional double-Q targets.

Networks expose ``inputs(instance, state)``, ``q_batch(X)``,
``grad_batch(X, dq)``, ``get_params``/``set_params`` and ``copy``; the PQC
network and the MLP both qualify.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..environment import Instance, MaskConfig, RewardParams, RoutingEnv, max_episode_steps
from ..errors import InvalidArgumentError
from .optim import Sgd, make_optimizer
from .replay import PrioritizedReplayBuffer, Transition, soft_update


@dataclass(frozen=True)
class TrainerConfig:
    episodes: int = 300
    learning_rate: float = 5e-4
    gamma: float = 0.99
    batch_size: int = 32
    tau: float = 0.01
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.6
    buffer_capacity: int = 10_000
    double_q: bool = True
    seed: int = 0
    prio_alpha: float = 0.6
    prio_beta_start: float = 0.4
    prio_eps: float = 1e-3
    optimizer: str = "sgd"

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise InvalidArgumentError("gamma must lie in [0, 1]")
        if not 0 < self.tau <= 1:
            raise InvalidArgumentError("tau must lie in (0, 1]")
        if self.eps_end > self.eps_start:
            raise InvalidArgumentError("eps_end must not exceed eps_start")
        if self.episodes < 0 or self.batch_size < 1:
            raise InvalidArgumentError("episodes >= 0 and batch_size >= 1 required")

    def epsilon(self, episode: int) -> float:
        span = max(self.eps_decay_fraction * self.episodes, 1.0)
        frac = min(episode / span, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class TrainingCurve:
    cost: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cost)

    def append(self, cost, loss, epsilon, grad_norm, wall_ms) -> None:
        self.cost.append(float(cost))
        self.loss.append(float(loss))
        self.epsilon.append(float(epsilon))
        self.grad_norm.append(float(grad_norm))
        self.wall_ms.append(float(wall_ms))

    def rows(self):
        for i in range(len(self)):
            yield i, self.cost[i], self.loss[i], self.epsilon[i], self.grad_norm[i]

    def tail_mean(self, fraction: float = 0.1) -> float:
        k = max(int(round(len(self) * fraction)), 1)
        return float(np.mean(self.cost[-k:]))


EnvFactory = Callable[[int, np.random.Generator], RoutingEnv]


def dataset_env_factory(
    instances: list[Instance],
    reward_params: RewardParams | None = None,
    mask_config: MaskConfig | None = None,
) -> EnvFactory:
    """Each episode draws one instance uniformly from ``instances``."""
    if not instances:
        raise InvalidArgumentError("need at least one training instance")
    envs = [RoutingEnv(inst, reward_params, mask_config) for inst in instances]

    def make(episode: int, rng: np.random.Generator) -> RoutingEnv:
        return envs[int(rng.integers(len(envs)))] if len(envs) > 1 else envs[0]

    return make


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise argmax over unmasked entries; rows without any legal entry give 0."""
    q = np.where(mask, q, -np.inf)
    out = np.argmax(q, axis=-1)
    return np.where(mask.any(axis=-1), out, 0)


def td_targets(online, target, batch: list[Transition], gamma: float, double_q: bool):
    """``(y, a_next)``; with ``double_q`` the online net picks ``a_next`` and the target net scores it."""
    Xn = np.stack([t.next_features for t in batch])
    Mn = np.stack([t.next_mask for t in batch])
    r = np.array([t.reward for t in batch])
    done = np.array([t.done for t in batch], dtype=float)
    q_target = target.q_batch(Xn)
    chooser = online.q_batch(Xn) if double_q else q_target
    a_next = masked_argmax(chooser, Mn)
    boot = q_target[np.arange(len(batch)), a_next]
    boot = np.where(Mn.any(axis=1), boot, 0.0)
    return r + gamma * (1.0 - done) * boot, a_next


def dqn_update(online, target, batch, weights, config: TrainerConfig, optimizer=None):
    """One step on ``0.5 * mean(w * (Q(s,a) - y)^2)``; returns (td_errors, loss, grad_norm).

    Without an ``optimizer`` the step is plain SGD at ``config.learning_rate``.
    """
    y, _ = td_targets(online, target, batch, config.gamma, config.double_q)
    X = np.stack([t.features for t in batch])
    a = np.array([t.action for t in batch])
    B = len(batch)
    q = online.q_batch(X)
    td = q[np.arange(B), a] - y
    dq = np.zeros_like(q)
    dq[np.arange(B), a] = weights * td / B
    _, grads = online.grad_batch(X, dq)
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    opt = optimizer or Sgd(None, config.learning_rate)
    online.set_params(opt.step(online.get_params(), grads))
    loss = 0.5 * float(np.mean(weights * td * td))
    return td, loss, norm


def train_dqn(env_factory: EnvFactory, network, config: TrainerConfig | None = None, callback=None):
    """Train ``network`` in place; returns ``(network, TrainingCurve)``."""
    cfg = config or TrainerConfig()
    root = np.random.SeedSequence(cfg.seed)
    env_rng, act_rng, buf_seed = (np.random.default_rng(s) for s in root.spawn(3))
    buffer = PrioritizedReplayBuffer(
        cfg.buffer_capacity, cfg.prio_alpha, cfg.prio_beta_start,
        beta_steps=max(cfg.episodes * 8, 1), eps=cfg.prio_eps, rng=buf_seed,
    )
    target = network.copy()
    optimizer = make_optimizer(cfg.optimizer, network.get_params(), cfg.learning_rate)
    curve = TrainingCurve()
    for episode in range(cfg.episodes):
        t0 = time.perf_counter()
        env = env_factory(episode, env_rng)
        inst = env.instance
        eps = cfg.epsilon(episode)
        state = env.reset()
        x = network.inputs(inst, state)
        mask = env.feasible_actions(state)
        cost, losses, norms = 0.0, [], []
        for _ in range(max_episode_steps(inst)):
            if act_rng.random() < eps:
                action = int(act_rng.choice(np.flatnonzero(mask)))
            else:
                action = int(masked_argmax(network.q_batch(x[None, :])[0], mask))
            out = env.step(state, action)
            cost -= out.reward
            if out.done:
                x_next, mask_next = x, np.zeros_like(mask)
            else:
                x_next = network.inputs(inst, out.next_state)
                mask_next = env.feasible_actions(out.next_state)
            buffer.add(Transition(x, mask, action, out.reward, x_next, mask_next, out.done))
            if len(buffer) >= cfg.batch_size:
                batch, weights, idx = buffer.sample(cfg.batch_size)
                td, loss, norm = dqn_update(network, target, batch, weights, cfg, optimizer)
                buffer.update_priorities(idx, td)
                target.set_params(soft_update(target.get_params(), network.get_params(), cfg.tau))
                losses.append(loss)
                norms.append(norm)
            state, x, mask = out.next_state, x_next, mask_next
            if out.done:
                break
        curve.append(cost, np.mean(losses) if losses else 0.0, eps, np.mean(norms) if norms else 0.0,
                     1000 * (time.perf_counter() - t0))
        if callback is not None:
            callback(episode, curve)
    return network, curve


def config_dict(config: TrainerConfig) -> dict:
    return asdict(config)
