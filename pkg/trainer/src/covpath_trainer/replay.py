"""Fixed-capacity transition store with uniform sampling.

The buffer is a preallocated ring shared between the acting and the
updating side of the training loop, so every operation that touches the
storage holds the buffer lock. Each slot carries the bootstrap horizon
(1 for plain transitions, up to n for n-step aggregates) and a flag
marking demonstration transitions.
"""

from __future__ import annotations

import threading
from collections import deque

import numpy as np


class ReplayBuffer:
    def __init__(
        self,
        capacity: int,
        obs_dim: int,
        action_dim: int = 2,
        seed: int = 0,
        obs_dtype=np.float32,
    ) -> None:
        """``obs_dtype=np.float16`` halves observation storage; maps and
        normalized lidar returns lose nothing that matters and sampling
        hands out float32 either way."""
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.empty((self.capacity, obs_dim), dtype=obs_dtype)
        self.next_obs = np.empty((self.capacity, obs_dim), dtype=obs_dtype)
        self.actions = np.empty((self.capacity, action_dim), dtype=np.float32)
        self.rewards = np.empty(self.capacity, dtype=np.float32)
        self.dones = np.empty(self.capacity, dtype=np.float32)
        self.horizons = np.ones(self.capacity, dtype=np.float32)
        self.flags = np.zeros(self.capacity, dtype=np.float32)
        self.total_added = 0
        self._cursor = 0
        self._size = 0
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return self._size

    def add(self, obs, action, reward, next_obs, done, *, horizon: int = 1, flag: float = 0.0) -> None:
        with self._lock:
            i = self._cursor
            self.obs[i] = obs
            self.actions[i] = action
            self.rewards[i] = reward
            self.next_obs[i] = next_obs
            self.dones[i] = float(done)
            self.horizons[i] = float(horizon)
            self.flags[i] = flag
            self._cursor = (i + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
            self.total_added += 1

    def sample(self, batch_size: int) -> dict[str, np.ndarray]:
        """Uniform minibatch as float32 arrays (fancy indexing copies)."""
        with self._lock:
            if self._size == 0:
                raise ValueError("cannot sample from an empty buffer")
            idx = self._rng.integers(0, self._size, size=batch_size)
            return {
                "obs": self.obs[idx].astype(np.float32, copy=False),
                "actions": self.actions[idx],
                "rewards": self.rewards[idx],
                "next_obs": self.next_obs[idx].astype(np.float32, copy=False),
                "dones": self.dones[idx],
                "horizons": self.horizons[idx],
                "flags": self.flags[idx],
            }


class NStepQueue:
    """Rolls plain transitions into n-step aggregates.

    ``push`` returns the aggregates that became final: the oldest start
    once the window is full, or every pending start when the episode
    terminates. Each aggregate is ``(obs, action, ret, next_obs, done,
    horizon, flag)`` with ``ret`` the discounted reward sum over
    ``horizon`` steps, ``next_obs`` the bootstrap state after them and
    ``flag`` taken from the start transition. ``flush`` drains the
    pending starts at a truncation, where bootstrapping through the
    last observed state is still correct.
    """

    def __init__(self, n: int, gamma: float) -> None:
        if n < 1:
            raise ValueError("n must be at least 1")
        self.n = int(n)
        self.gamma = float(gamma)
        self._window: deque = deque()

    def push(self, obs, action, reward, next_obs, done, flag: float = 0.0) -> list[tuple]:
        self._window.append((obs, action, float(reward), next_obs, bool(done), float(flag)))
        if done:
            return self.flush()
        if len(self._window) == self.n:
            return [self._emit_oldest()]
        return []

    def flush(self) -> list[tuple]:
        out = []
        while self._window:
            out.append(self._emit_oldest())
        return out

    def _emit_oldest(self) -> tuple:
        obs, action = self._window[0][:2]
        flag = self._window[0][5]
        ret = 0.0
        for i, item in enumerate(self._window):
            ret += self.gamma**i * item[2]
        _, _, _, next_obs, done, _ = self._window[-1]
        horizon = len(self._window)
        self._window.popleft()
        return (obs, action, ret, next_obs, done, horizon, flag)
