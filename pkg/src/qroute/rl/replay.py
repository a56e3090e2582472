"""Proportional prioritized replay and the soft target update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, NotReadyError


@dataclass(frozen=True)
class Transition:
    features: np.ndarray
    mask: np.ndarray
    action: int
    reward: float
    next_features: np.ndarray
    next_mask: np.ndarray
    done: bool


class PrioritizedReplayBuffer:
    """Ring buffer sampling entry ``i`` with probability ``p_i^alpha / sum_j p_j^alpha``.

    The importance-sampling exponent moves linearly from ``beta_start`` to 1
    over ``beta_steps`` calls to ``sample``.
    """

    def __init__(
        self,
        capacity: int,
        alpha: float = 0.6,
        beta_start: float = 0.4,
        beta_steps: int = 10_000,
        eps: float = 1e-3,
        rng=None,
    ):
        if capacity < 1:
            raise InvalidArgumentError("capacity must be positive")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.beta_start = float(beta_start)
        self.beta_steps = max(int(beta_steps), 1)
        self.eps = float(eps)
        self.rng = np.random.default_rng(rng)
        self.storage: list[Transition | None] = [None] * self.capacity
        self.priorities = np.zeros(self.capacity)
        self.size = 0
        self.cursor = 0
        self.samples_drawn = 0

    def __len__(self) -> int:
        return self.size

    @property
    def beta(self) -> float:
        frac = min(self.samples_drawn / self.beta_steps, 1.0)
        return self.beta_start + frac * (1.0 - self.beta_start)

    def add(self, transition: Transition, priority: float | None = None) -> None:
        if priority is None:
            priority = self.priorities[: self.size].max() if self.size else 1.0
        self.storage[self.cursor] = transition
        self.priorities[self.cursor] = max(float(priority), self.eps)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def probabilities(self) -> np.ndarray:
        p = self.priorities[: self.size] ** self.alpha
        return p / p.sum()

    def update_priorities(self, indices, td_errors) -> None:
        self.priorities[np.asarray(indices)] = np.abs(np.asarray(td_errors, dtype=float)) + self.eps

    def sample(self, batch_size: int, beta: float | None = None):
        if self.size < batch_size:
            raise NotReadyError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        probs = self.probabilities()
        idx = self.rng.choice(self.size, size=batch_size, p=probs)
        b = self.beta if beta is None else beta
        weights = (self.size * probs[idx]) ** (-b)
        weights = weights / weights.max()
        self.samples_drawn += 1
        return [self.storage[i] for i in idx], weights, idx


def sample_batch(buffer: PrioritizedReplayBuffer, batch_size: int, beta: float | None = None):
    """``(transitions, importance weights, indices)``."""
    return buffer.sample(batch_size, beta)


def soft_update(target_params, online_params, tau: float) -> list[np.ndarray]:
    """``tau * online + (1 - tau) * target``, elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError("tau must lie in [0, 1]")
    out = []
    for t, o in zip(target_params, online_params, strict=True):
        t, o = np.asarray(t, dtype=float), np.asarray(o, dtype=float)
        if t.shape != o.shape:
            raise InvalidArgumentError(f"shape mismatch {t.shape} vs {o.shape}")
        out.append(tau * o + (1.0 - tau) * t)
    return out
