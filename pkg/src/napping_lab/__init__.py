"""Novelty adaptation principles on top of a frozen reinforcement-learning policy.

Modules: ``envs`` (CartPole, MountainCar, CrossRoad and novelty samplers),
``baseline`` (MLP policy, CEM trainer, online/fine-tune comparators),
``napping`` (principle store and domain scores), ``trial`` (80-episode
protocol and aggregation), ``cli`` (command-line front end).
"""

from ._accel import USE_NUMBA

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "__version__"]
