"""siglab: a desk-scale traffic signal control laboratory.

Interpretable monotone precedence policies, DQN-based distillation trainers,
CMA-ES and PPO tuning, and actuated/fixed-time baselines, all running on a
deterministic seeded point-queue intersection simulator.
"""

__version__ = "0.1.0"
