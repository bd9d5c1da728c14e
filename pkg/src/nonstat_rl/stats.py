"""Percentile and box-plot statistics used across the package.

Percentiles use the nearest-rank definition: the p-th percentile of n sorted
samples is the value at index ceil(p/100 * n) - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BOX_PERCENTILES = (1, 25, 50, 75, 99)


def nearest_rank(values, pct):
    """Nearest-rank percentile; `values` need not be sorted."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("percentile of empty sample")
    idx = max(0, math.ceil(pct / 100.0 * arr.size) - 1)
    return float(arr[idx])


@dataclass
class BoxStats:
    """Five-number summary (1/25/50/75/99 percentiles) plus mean and count."""

    p1: float
    p25: float
    p50: float
    p75: float
    p99: float
    mean: float
    count: int

    @classmethod
    def from_values(cls, values):
        arr = np.sort(np.asarray(values, dtype=np.float64))
        if arr.size == 0:
            raise ValueError("box stats of empty sample")
        pick = lambda p: float(arr[max(0, math.ceil(p / 100.0 * arr.size) - 1)])
        return cls(pick(1), pick(25), pick(50), pick(75), pick(99),
                   float(arr.mean()), int(arr.size))

    def row(self):
        return [self.p1, self.p25, self.p50, self.p75, self.p99, self.mean]
