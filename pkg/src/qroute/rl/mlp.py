"""Small ReLU network with hand-written backpropagation."""
from __future__ import annotations

import json

import numpy as np

from ..environment import EnvState, Instance
from ..errors import InvalidArgumentError
from .features import feature_size, state_features


class MlpNet:
    """Affine layers with ReLU between them and a linear output layer."""

    def __init__(self, sizes: list[int], rng=None):
        if len(sizes) < 2:
            raise InvalidArgumentError("need at least input and output sizes")
        rng = np.random.default_rng(rng)
        self.sizes = list(sizes)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            self.biases.append(np.zeros(fan_out))

    def get_params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def set_params(self, params) -> None:
        k = len(self.sizes) - 1
        params = [np.array(p, dtype=float) for p in params]
        self.weights, self.biases = params[:k], params[k:]

    def forward(self, X: np.ndarray, keep: bool = False):
        h = np.atleast_2d(X)
        cache = [h]
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if li < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return (h, cache) if keep else h

    def backward(self, cache, dout: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(dout * output)`` in ``get_params`` order."""
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        delta = dout
        for li in range(len(self.weights) - 1, -1, -1):
            gW[li] = cache[li].T @ delta
            gb[li] = delta.sum(0)
            if li > 0:
                delta = (delta @ self.weights[li].T) * (cache[li] > 0)
        return [*gW, *gb]


class MlpQNetwork:
    """Q-network over ``state_features``; same interface as the PQC network."""

    kind = "mlp"

    def __init__(self, num_nodes: int, hidden: int = 256, depth: int = 2, rng=None):
        self.num_nodes = num_nodes
        self.hidden = hidden
        self.depth = depth
        self.net = MlpNet([feature_size(num_nodes), *[hidden] * depth, num_nodes], rng)

    @property
    def num_actions(self) -> int:
        return self.num_nodes

    def get_params(self):
        return self.net.get_params()

    def set_params(self, params) -> None:
        self.net.set_params(params)

    def copy(self) -> "MlpQNetwork":
        other = object.__new__(MlpQNetwork)
        other.num_nodes, other.hidden, other.depth = self.num_nodes, self.hidden, self.depth
        other.net = MlpNet.__new__(MlpNet)
        other.net.sizes = list(self.net.sizes)
        other.net.set_params([p.copy() for p in self.net.get_params()])
        return other

    def inputs(self, instance: Instance, state: EnvState) -> np.ndarray:
        if instance.num_nodes != self.num_nodes:
            raise InvalidArgumentError(f"network built for {self.num_nodes} nodes, instance has {instance.num_nodes}")
        return state_features(instance, state)

    def q_batch(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward(X)

    def grad_batch(self, X: np.ndarray, dq: np.ndarray):
        q, cache = self.net.forward(X, keep=True)
        return q, self.net.backward(cache, dq)

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "depth": self.depth,
            "instance_size": self.num_nodes,
            "params": [p.tolist() for p in self.get_params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpQNetwork":
        net = cls(int(d["instance_size"]), int(d["hidden"]), int(d["depth"]))
        net.set_params(d["params"])
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"algo": "ddqn-mlp", **self.to_dict()}, fh)
