"""Fixed-capacity ring buffer of feature-space transitions."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import ConfigurationError, ShapeError, StateError
from .qlearn import TdBatch


class Transition(NamedTuple):
    features: np.ndarray
    action: int
    reward: float
    next_features: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Ring buffer with uniform sampling (with replacement).

    Storage is allocated on the first push, once the feature length is known.
    When full, the oldest transition is overwritten.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity <= 0:
            raise ConfigurationError("capacity must be positive")
        self.capacity = int(capacity)
        self.write_cursor = 0
        self.filled = 0
        self._features = None
        self._next = None
        self._actions = np.zeros(self.capacity, dtype=np.intp)
        self._rewards = np.zeros(self.capacity)
        self._terminal = np.zeros(self.capacity, dtype=bool)

    def __len__(self):
        return self.filled

    @property
    def n_features(self):
        return None if self._features is None else self._features.shape[1]

    def push(self, t: Transition) -> None:
        features = np.asarray(t.features, dtype=np.float64)
        next_features = np.asarray(t.next_features, dtype=np.float64)
        if features.ndim != 1 or features.shape != next_features.shape:
            raise ShapeError("features and next_features must be 1-D with equal length")
        if self._features is None:
            self._features = np.zeros((self.capacity, features.shape[0]))
            self._next = np.zeros((self.capacity, features.shape[0]))
        elif features.shape[0] != self._features.shape[1]:
            raise ShapeError(
                f"feature length {features.shape[0]} does not match buffer ({self._features.shape[1]})"
            )
        i = self.write_cursor
        self._features[i] = features
        self._next[i] = next_features
        self._actions[i] = int(t.action)
        self._rewards[i] = float(t.reward)
        self._terminal[i] = bool(t.terminal)
        self.write_cursor = (i + 1) % self.capacity
        self.filled = min(self.filled + 1, self.capacity)

    def _slot(self, k: int) -> int:
        # k-th oldest stored transition
        start = self.write_cursor if self.filled == self.capacity else 0
        return (start + k) % self.capacity

    def __getitem__(self, k: int) -> Transition:
        if not -self.filled <= k < self.filled:
            raise IndexError(k)
        i = self._slot(k % self.filled)
        return Transition(
            self._features[i].copy(),
            int(self._actions[i]),
            float(self._rewards[i]),
            self._next[i].copy(),
            bool(self._terminal[i]),
        )

    def __iter__(self):
        for k in range(self.filled):
            yield self[k]

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if self.filled == 0:
            raise StateError("cannot sample from an empty replay buffer")
        if batch_size <= 0:
            raise ConfigurationError("batch_size must be positive")
        return rng.integers(0, self.filled, size=batch_size)

    def sample_uniform(self, batch_size: int, rng) -> TdBatch:
        """Draw ``batch_size`` transitions i.i.d. uniformly over the filled slots."""
        idx = self.sample_indices(batch_size, rng)
        return TdBatch(
            self._features[idx],
            self._actions[idx],
            self._rewards[idx],
            self._next[idx],
            self._terminal[idx],
        )
