"""Routing MDP, statevector PQC Q-networks and QUBO/QSVT baselines for pickup-and-delivery with time windows."""

__version__ = "0.1.0"
