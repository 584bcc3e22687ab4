"""Optimization and control procedures for the signal laboratory."""

from .replay import ReplayBuffer, Transition
from .dqn import DqnConfig, DqnTrainer, road_feature_groups
from .cma import CmaesOptimizer, cma_es_tune, sphere
from .ppo import PpoConfig, PpoTrainer
from .baselines import (
    ActuatedController,
    FixedTimeController,
    PrecedenceController,
    default_actuated_order,
)

__all__ = [
    "ReplayBuffer",
    "Transition",
    "DqnConfig",
    "DqnTrainer",
    "road_feature_groups",
    "CmaesOptimizer",
    "cma_es_tune",
    "sphere",
    "PpoConfig",
    "PpoTrainer",
    "ActuatedController",
    "FixedTimeController",
    "PrecedenceController",
    "default_actuated_order",
]
