"""Experience tuples and the four replay-buffer strategies.

All constituent buffers are FIFO rings; sampling is uniform with
replacement within a ring. The strategies differ in how rings are
combined:

* ``large``  -- one ring big enough to effectively keep everything
* ``small``  -- one ring that keeps only recent experience
* ``ltst``   -- long-term + short-term rings, inserted into both and
  sampled half/half
* ``multi``  -- one ring per environment index, created on first sight
  and sampled in equal shares
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError


@dataclass
class Experience:
    """One (state, action, reward, next state, done) interaction."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    env_index: int = 0

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ConfigError(f"non-finite reward {self.reward}")


class Ring:
    """Fixed-capacity FIFO ring with uniform sampling (with replacement)."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigError("ring capacity must be >= 1")
        self.capacity = int(capacity)
        self.items = []
        self._next = 0

    def append(self, item):
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def sample(self, k, rng):
        if not self.items:
            raise UsageError("sampling from an empty buffer")
        idx = rng.integers(0, len(self.items), size=k)
        return [self.items[i] for i in idx]

    def __len__(self):
        return len(self.items)

    def contents(self):
        # oldest-first order
        return self.items[self._next:] + self.items[:self._next]


class LargeBuffer:
    name = "large"

    def __init__(self, capacity=1_000_000):
        self.ring = Ring(capacity)

    def insert(self, exp):
        self.ring.append(exp)

    def sample(self, batch, rng):
        return self.ring.sample(batch, rng)

    def __len__(self):
        return len(self.ring)


class SmallBuffer(LargeBuffer):
    name = "small"

    def __init__(self, capacity=10_000):
        self.ring = Ring(capacity)


class LongTermShortTermBuffer:
    """Insert into both rings; draw half of every batch from each.

    If one ring is empty (only possible before any insert given that both
    receive every sample, but kept for config variants) the other supplies
    the full batch. Odd batch sizes give the extra sample to the long ring.
    """

    name = "ltst"

    def __init__(self, long_capacity=1_000_000, short_capacity=10_000):
        self.long = Ring(long_capacity)
        self.short = Ring(short_capacity)

    def insert(self, exp):
        self.long.append(exp)
        self.short.append(exp)

    def sample(self, batch, rng):
        if len(self.long) == 0 and len(self.short) == 0:
            raise UsageError("sampling from an empty buffer")
        if len(self.long) == 0:
            return self.short.sample(batch, rng)
        if len(self.short) == 0:
            return self.long.sample(batch, rng)
        n_long = batch - batch // 2
        return self.long.sample(n_long, rng) + self.short.sample(batch // 2, rng)

    def __len__(self):
        return len(self.long)


class MultiBuffer:
    """One ring per environment index, sampled in equal shares.

    The batch remainder is spread round-robin over the lowest environment
    indices so the split is deterministic.
    """

    name = "multi"

    def __init__(self, capacity_each=1_000_000):
        self.capacity_each = capacity_each
        self.rings = {}

    def insert(self, exp):
        ring = self.rings.get(exp.env_index)
        if ring is None:
            ring = self.rings[exp.env_index] = Ring(self.capacity_each)
        ring.append(exp)

    def sample(self, batch, rng):
        live = sorted(idx for idx, ring in self.rings.items() if len(ring))
        if not live:
            raise UsageError("sampling from an empty buffer")
        base, extra = divmod(batch, len(live))
        out = []
        for pos, idx in enumerate(live):
            share = base + (1 if pos < extra else 0)
            if share:
                out.extend(self.rings[idx].sample(share, rng))
        return out

    def __len__(self):
        return sum(len(r) for r in self.rings.values())


STRATEGIES = {
    "large": LargeBuffer,
    "small": SmallBuffer,
    "ltst": LongTermShortTermBuffer,
    "multi": MultiBuffer,
}


def make_buffer(name, **kwargs):
    try:
        return STRATEGIES[name](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown buffer strategy {name!r}") from None
