"""Experience replay: a fixed-capacity ring with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One stored interaction: flattened observations around an action."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Ring buffer over flattened transitions; overwrites oldest when full."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self._s = np.zeros((capacity, obs_dim))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, obs_dim))
        self._t = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, action: int, reward: float, next_state,
             terminal: bool) -> None:
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        i = self._pos
        self._s[i] = state
        self._a[i] = action
        self._r[i] = reward
        self._s2[i] = next_state
        self._t[i] = terminal
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def push_transition(self, tr: Transition) -> None:
        self.push(tr.state, tr.action, tr.reward, tr.next_state, tr.terminal)

    def sample(self, rng: np.random.Generator, n: int) -> Batch:
        """Uniform sample (with replacement) over current contents."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=n)
        return Batch(
            states=self._s[idx],
            actions=self._a[idx],
            rewards=self._r[idx],
            next_states=self._s2[idx],
            terminals=self._t[idx],
        )

    def states(self) -> np.ndarray:
        return self._s[:self._size]
