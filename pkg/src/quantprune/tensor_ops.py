"""Dense float64 tensor helpers and order-statistics primitives.

Tensors are plain numpy float64 arrays; ``as_tensor`` is the validating
entry point used everywhere a tensor crosses a module boundary.
"""

from __future__ import annotations

import math

import numpy as np


def as_tensor(data) -> np.ndarray:
    """Convert to a float64 array, rejecting NaN/Inf values."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite (got NaN or Inf)")
    return arr


def quantile(x: np.ndarray, a: float) -> float:
    """Linearly interpolated order statistic of the flattened tensor.

    For sorted values v[0..M-1] and position p = a*(M-1), returns
    v[floor(p)] + (p - floor(p)) * (v[ceil(p)] - v[floor(p)]).
    """
    flat = np.asarray(x, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("empty input")
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"quantile fraction must be in [0, 1], got {a}")
    return float(np.quantile(flat, a, method="linear"))


def clip(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Elementwise min(max(x, lo), hi)."""
    if lo > hi:
        raise ValueError(f"clip bounds inverted: lo={lo} > hi={hi}")
    return np.clip(x, lo, hi)


def select_k_smallest_magnitude(scores: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the k smallest-magnitude entries.

    Selection key is (|score|, index) ascending, so ties break toward the
    lower flat index. Returns a sorted int64 index array of length k.
    """
    flat = np.asarray(scores).ravel()
    if k < 0 or k > flat.size:
        raise ValueError(f"k={k} out of range for {flat.size} scores")
    order = np.argsort(np.abs(flat), kind="stable")
    return np.sort(order[:k])


def round_half_up(x: float) -> int:
    """round(x) with ties away from the floor, e.g. round_half_up(2.5) == 3."""
    return int(math.floor(x + 0.5))
