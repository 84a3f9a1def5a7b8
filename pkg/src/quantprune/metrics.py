"""Compression and task metrics: memory footprint, performance density,
PSNR, and gradient-spike detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set

import numpy as np


@dataclass
class FootprintEntry:
    count: int          # element count
    bits: int           # storage bits per element (32 when unquantized)
    sparsity: float = 0.0

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in [0, 1], got {self.sparsity}")


@dataclass
class FootprintSpec:
    weights: List[FootprintEntry] = field(default_factory=list)
    activations: List[FootprintEntry] = field(default_factory=list)


def memory_footprint(spec: FootprintSpec) -> float:
    """Sum of count * bits * (1 - sparsity) over all entries, in megabits."""
    entries = spec.weights + spec.activations
    if not entries:
        raise ValueError("empty footprint spec")
    total_bits = sum(e.count * e.bits * (1.0 - e.sparsity) for e in entries)
    return total_bits / 1e6


def performance_density(perf: float, footprint_mb: float) -> float:
    """Task metric divided by memory footprint in megabits."""
    if footprint_mb <= 0.0:
        raise ValueError(f"footprint must be positive, got {footprint_mb}")
    return perf / footprint_mb


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE); +inf when the tensors are identical."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0.0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    if math.isinf(mse):
        return -math.inf
    return 10.0 * math.log10(peak * peak / mse)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels).ravel()))


def detect_gradient_spike(series: Sequence[float], boundaries: Set[int],
                          pre_window: int, post_window: int,
                          ratio: float) -> Dict[int, bool]:
    """Per-boundary spike verdicts.

    A spike fires at boundary b iff max(series[b .. b+post_window]) is at
    least ratio * median(series[b-pre_window .. b-1]).
    """
    series = list(series)
    verdicts = {}
    for b in sorted(boundaries):
        if b - pre_window < 0 or b + post_window >= len(series):
            raise ValueError(
                f"boundary {b} windows ({pre_window}, {post_window}) out of "
                f"range for series of length {len(series)}")
        baseline = float(np.median(series[b - pre_window:b]))
        peak_val = max(series[b:b + post_window + 1])
        verdicts[b] = peak_val >= ratio * baseline
    return verdicts
