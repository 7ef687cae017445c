"""Corridor traffic microsimulation and RL signal control.

A 1-D corridor with one intersection and mid-block crosswalks, IDM vehicle
dynamics, point-mass pedestrians, a PPO-trained joint signal policy, and
fixed-time / unsignalized baselines with a benchmark harness.
"""

from .env import TrafficEnv, compute_reward
from .network import CorridorNetwork, NetworkConfig, build_corridor, mini_config
from .signals import ActionVector

__all__ = [
    "ActionVector",
    "CorridorNetwork",
    "NetworkConfig",
    "TrafficEnv",
    "build_corridor",
    "compute_reward",
    "mini_config",
]

__version__ = "0.1.0"
