"""Bounded FIFO store of predicted lights used as random priors."""
from __future__ import annotations

import math
from collections import deque

import numpy as np


class EmptyContainerError(LookupError):
    pass


def default_capacity(num_samples: int) -> int:
    """A quarter of the dataset size, rounded up (at least one slot)."""
    return max(1, math.ceil(num_samples / 4))


class LightContainer:
    """FIFO queue of light vectors; the oldest entry is evicted when full.

    Sampling is uniform, with replacement, and never mutates the queue.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self._items: deque = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def items(self) -> list[np.ndarray]:
        return list(self._items)

    def push(self, light) -> None:
        light = np.asarray(light, dtype=np.float32).reshape(3).copy()
        self._items.append(light)

    def extend(self, lights) -> None:
        for light in lights:
            self.push(light)

    def sample_random(self, rng: np.random.Generator) -> np.ndarray:
        if not self._items:
            raise EmptyContainerError("light container is empty; push a light before sampling")
        return self._items[int(rng.integers(len(self._items)))].copy()

    def sample_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.stack([self.sample_random(rng) for _ in range(n)])

    def state_dict(self) -> dict:
        return {"capacity": self.capacity, "items": [v.tolist() for v in self._items]}

    @classmethod
    def from_state_dict(cls, state: dict) -> "LightContainer":
        c = cls(state["capacity"])
        c.extend(state["items"])
        return c
