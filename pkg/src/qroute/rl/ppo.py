"""Clipped-surrogate policy optimisation with a masked categorical policy."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..environment import EnvState, Instance, max_episode_steps
from ..errors import InvalidArgumentError
from .dqn import EnvFactory, TrainingCurve
from .features import feature_size, state_features
from .mlp import MlpNet
from .optim import Adam


@dataclass(frozen=True)
class PpoConfig:
    episodes: int = 300
    clip: float = 0.2
    rollout_steps: int = 512
    epochs: int = 4
    minibatch: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise InvalidArgumentError("clip must lie in (0, 1)")
        if self.rollout_steps < 1 or self.epochs < 1 or self.minibatch < 1:
            raise InvalidArgumentError("rollout, epochs and minibatch must be positive")


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities with masked entries at -inf and excluded from the normaliser."""
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True))
    return z - lse


def clipped_surrogate_grad(ratio: np.ndarray, adv: np.ndarray, clip: float) -> np.ndarray:
    """d/d(log pi) of ``-mean(min(r A, clip(r) A))``; zero where the clipped branch is active."""
    clipped = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
    return np.where(clipped, 0.0, -ratio * adv) / len(ratio)


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float):
    """Advantages and returns; ``dones[t]`` ends the episode after step ``t``."""
    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nxt = last_value if t == T - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * nxt * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + np.asarray(values)


class PpoAgent:
    """Actor and critic MLPs over ``state_features``."""

    kind = "ppo"

    def __init__(self, num_nodes: int, hidden: int = 64, rng=None):
        rng = np.random.default_rng(rng)
        self.num_nodes = num_nodes
        self.hidden = hidden
        size = feature_size(num_nodes)
        self.actor = MlpNet([size, hidden, hidden, num_nodes], rng)
        self.critic = MlpNet([size, hidden, hidden, 1], rng)
        # small final layer keeps the initial policy close to uniform
        self.actor.weights[-1] *= 0.01

    @property
    def num_actions(self) -> int:
        return self.num_nodes

    def inputs(self, instance: Instance, state: EnvState) -> np.ndarray:
        if instance.num_nodes != self.num_nodes:
            raise InvalidArgumentError(f"policy built for {self.num_nodes} nodes, instance has {instance.num_nodes}")
        return state_features(instance, state)

    def q_batch(self, X: np.ndarray) -> np.ndarray:
        """Action logits; a greedy rollout takes their masked argmax."""
        return self.actor.forward(X)

    def value(self, X: np.ndarray) -> np.ndarray:
        return self.critic.forward(X)[:, 0]

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "instance_size": self.num_nodes,
            "actor": [p.tolist() for p in self.actor.get_params()],
            "critic": [p.tolist() for p in self.critic.get_params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PpoAgent":
        agent = cls(int(d["instance_size"]), int(d["hidden"]))
        agent.actor.set_params(d["actor"])
        agent.critic.set_params(d["critic"])
        return agent

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"algo": "ppo", **self.to_dict()}, fh)


def policy_loss_grads(agent: PpoAgent, X, M, actions, old_logp, adv, returns, cfg: PpoConfig):
    """Loss value and gradients for actor and critic on one minibatch."""
    B = len(actions)
    idx = np.arange(B)
    logits, a_cache = agent.actor.forward(X, keep=True)
    logp_all = masked_log_softmax(logits, M)
    probs = np.where(M, np.exp(logp_all), 0.0)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - old_logp)
    surr = np.minimum(ratio * adv, np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv)
    plogp = np.where(M, probs * np.where(M, logp_all, 0.0), 0.0)
    entropy = -plogp.sum(axis=1)

    # d loss / d logits through log pi(a) and the entropy bonus
    g_logp = clipped_surrogate_grad(ratio, adv, cfg.clip)
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    d_logits = g_logp[:, None] * (onehot - probs)
    log_safe = np.where(M, logp_all, 0.0)
    d_logits += cfg.entropy_coef * probs * (log_safe + entropy[:, None]) / B
    g_actor = agent.actor.backward(a_cache, d_logits)

    v, c_cache = agent.critic.forward(X, keep=True)
    v = v[:, 0]
    d_v = 2 * cfg.value_coef * (v - returns) / B
    g_critic = agent.critic.backward(c_cache, d_v[:, None])
    loss = float(-surr.mean() - cfg.entropy_coef * entropy.mean() + cfg.value_coef * np.mean((v - returns) ** 2))
    return loss, g_actor, g_critic


def train_ppo(env_factory: EnvFactory, num_nodes: int, config: PpoConfig | None = None, callback=None):
    """Returns ``(agent, TrainingCurve)``; the curve's epsilon column is always 0."""
    cfg = config or PpoConfig()
    root = np.random.SeedSequence(cfg.seed)
    init_seq, env_seq, act_seq, mb_seq = root.spawn(4)
    agent = PpoAgent(num_nodes, cfg.hidden, np.random.default_rng(init_seq))
    env_rng, act_rng, mb_rng = (np.random.default_rng(s) for s in (env_seq, act_seq, mb_seq))
    opt_actor = Adam(agent.actor.get_params(), cfg.learning_rate)
    opt_critic = Adam(agent.critic.get_params(), cfg.learning_rate)
    curve = TrainingCurve()
    buf = {k: [] for k in ("x", "m", "a", "logp", "r", "v", "done")}
    last = {"loss": 0.0, "norm": 0.0}

    def update(last_value: float) -> None:
        X, M = np.array(buf["x"]), np.array(buf["m"])
        actions, old_logp = np.array(buf["a"]), np.array(buf["logp"])
        adv, returns = gae(buf["r"], buf["v"], np.array(buf["done"], float), last_value, cfg.gamma, cfg.gae_lambda)
        std = adv.std()
        adv = (adv - adv.mean()) / (std + 1e-8) if std > 0 else adv - adv.mean()
        losses, norms = [], []
        for _ in range(cfg.epochs):
            order = mb_rng.permutation(len(actions))
            for start in range(0, len(order), cfg.minibatch):
                mb = order[start:start + cfg.minibatch]
                loss, ga, gc = policy_loss_grads(agent, X[mb], M[mb], actions[mb], old_logp[mb], adv[mb], returns[mb], cfg)
                agent.actor.set_params(opt_actor.step(agent.actor.get_params(), ga))
                agent.critic.set_params(opt_critic.step(agent.critic.get_params(), gc))
                losses.append(loss)
                norms.append(float(np.sqrt(sum(np.sum(g * g) for g in ga + gc))))
        last["loss"], last["norm"] = float(np.mean(losses)), float(np.mean(norms))
        for k in buf:
            buf[k].clear()

    for episode in range(cfg.episodes):
        t0 = time.perf_counter()
        env = env_factory(episode, env_rng)
        inst = env.instance
        state = env.reset()
        cost = 0.0
        for _ in range(max_episode_steps(inst)):
            x = agent.inputs(inst, state)
            mask = env.feasible_actions(state)
            logp_all = masked_log_softmax(agent.q_batch(x[None, :])[0], mask)
            probs = np.where(mask, np.exp(logp_all), 0.0)
            action = int(act_rng.choice(len(probs), p=probs / probs.sum()))
            out = env.step(state, action)
            cost -= out.reward
            buf["x"].append(x)
            buf["m"].append(mask)
            buf["a"].append(action)
            buf["logp"].append(logp_all[action])
            buf["r"].append(out.reward)
            buf["v"].append(float(agent.value(x[None, :])[0]))
            buf["done"].append(out.done)
            state = out.next_state
            if out.done:
                break
        if not state.done:
            buf["done"][-1] = True
        if len(buf["a"]) >= cfg.rollout_steps or episode == cfg.episodes - 1:
            update(0.0)
        # each episode reports the loss of the latest update
        curve.append(cost, last["loss"], 0.0, last["norm"], 1000 * (time.perf_counter() - t0))
        if callback is not None:
            callback(episode, curve)
    return agent, curve


def config_dict(config: PpoConfig) -> dict:
    return asdict(config)
