"""State vector shared by the classical networks."""
from __future__ import annotations

import numpy as np

from ..environment import EnvState, Instance
from ..pqc import encode_features


def feature_size(num_nodes: int) -> int:
    return 2 * num_nodes + num_nodes + 1


def state_features(instance: Instance, state: EnvState) -> np.ndarray:
    """Per-node (load, time) angles scaled to [-1, 1], visited flags, at-depot flag."""
    angles = encode_features(instance, state) / np.pi
    visited = np.asarray(state.visited, dtype=float)
    at_depot = float(state.vehicle.position == 0)
    return np.concatenate([angles, visited, [at_depot]])
