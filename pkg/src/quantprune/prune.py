"""Pruning operator: cubic sparsity schedule, exact-k magnitude masks,
sliding-window magnitude accumulation, and channel-wise structured mode.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor_ops import round_half_up, select_k_smallest_magnitude

UNSTRUCTURED = "unstructured"
CHANNELWISE = "channelwise"


@dataclass
class PruneConfig:
    s_f: float = 0.5        # target sparsity
    t_0: int = 0            # start step
    dt: int = 1             # interval between pruning steps
    n: int = 1              # repetitions
    window: int = 1         # sliding window length T (buffer size)
    gamma: float = 3.0      # schedule exponent
    mode: str = UNSTRUCTURED
    channel_axis: int = 1
    # feature tensors carry a leading batch axis; the mask must be the same
    # for every sample, so magnitudes are averaged over axis 0 and the mask
    # broadcasts back over it
    reduce_batch: bool = False

    def __post_init__(self):
        if not 0.0 <= self.s_f <= 1.0:
            raise ValueError(f"s_f must be in [0, 1], got {self.s_f}")
        if self.dt < 1 or self.n < 1 or self.window < 1:
            raise ValueError("dt, n and window must all be >= 1")
        if self.mode not in (UNSTRUCTURED, CHANNELWISE):
            raise ValueError(f"unknown prune mode {self.mode!r}")


@dataclass
class PruneState:
    """Per-tensor pruner. ``mask is None`` means all-ones."""

    config: PruneConfig = field(default_factory=PruneConfig)
    mask: Optional[np.ndarray] = None
    s_t: float = 0.0
    t: int = 0
    ring: deque = field(default_factory=deque)
    running_sum: Optional[np.ndarray] = None


def sparsity_at(t: int, cfg: PruneConfig) -> float:
    """Cubic schedule: s_f * (1 - (1 - i/n)^gamma) with i pruning steps done."""
    if t < cfg.t_0:
        return 0.0
    i = min((t - cfg.t_0) // cfg.dt, cfg.n)
    return cfg.s_f * (1.0 - (1.0 - i / cfg.n) ** cfg.gamma)


def schedule_boundaries(cfg: PruneConfig):
    """Steps t_0 + i*dt (i in 1..n) where the sparsity level increases."""
    return [cfg.t_0 + i * cfg.dt for i in range(1, cfg.n + 1)]


def _channel_scores(x: np.ndarray, axis: int) -> np.ndarray:
    other = tuple(a for a in range(x.ndim) if a != axis)
    return np.abs(x).mean(axis=other)


def window_push(state: PruneState, x_t: np.ndarray):
    """Add |x_t| (or its per-channel mean) to the ring; evict when full.

    The running sum is recomputed as a single reduction over the retained
    entries so it stays bit-exact under eviction.
    """
    cfg = state.config
    if cfg.mode == CHANNELWISE:
        entry = _channel_scores(x_t, cfg.channel_axis)
        if state.ring and entry.shape != state.ring[-1].shape:
            raise ValueError(
                f"channel extent varies: {entry.shape} vs {state.ring[-1].shape}")
    else:
        entry = np.abs(x_t)
        if cfg.reduce_batch:
            entry = entry.mean(axis=0)
        if state.ring and entry.shape != state.ring[-1].shape:
            raise ValueError("feature shape varies; use channelwise mode")
    state.ring.append(entry)
    if len(state.ring) > cfg.window:
        state.ring.popleft()
    state.running_sum = np.sum(np.stack(state.ring), axis=0)


def compute_mask(scores: np.ndarray, s: float) -> np.ndarray:
    """Binary mask zeroing exactly round(s * M) smallest-magnitude entries."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {s}")
    scores = np.asarray(scores)
    k = round_half_up(s * scores.size)
    mask = np.ones(scores.size)
    mask[select_k_smallest_magnitude(scores, k)] = 0.0
    return mask.reshape(scores.shape)


def _broadcast_mask(state: PruneState, like: np.ndarray) -> np.ndarray:
    """Mask shaped for elementwise application to ``like``."""
    mask = state.mask
    if state.config.mode == CHANNELWISE:
        shape = [1] * like.ndim
        shape[state.config.channel_axis] = mask.size
        return mask.reshape(shape)
    if state.config.reduce_batch and mask.ndim == like.ndim - 1:
        return mask[None]
    return mask


def prune_step(state: PruneState, x_t: np.ndarray) -> np.ndarray:
    """One operator call: advance the schedule, refresh the mask only when
    the sparsity level changed, and return the masked tensor."""
    state.t += 1
    window_push(state, x_t)
    s_new = sparsity_at(state.t, state.config)
    if s_new != state.s_t or (state.mask is None and s_new > 0.0):
        state.mask = compute_mask(state.running_sum, s_new)
        state.s_t = s_new
    return apply_current(state, x_t)


def apply_current(state: PruneState, x: np.ndarray) -> np.ndarray:
    """Apply the current mask without advancing the schedule (eval passes)."""
    if state.mask is None:
        return x
    return x * _broadcast_mask(state, x)


def prune_backward(upstream: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    """Exact derivative of x * m: upstream masked elementwise."""
    if mask is None:
        return upstream
    try:
        return upstream * mask
    except ValueError as exc:
        raise ValueError(
            f"mask shape {mask.shape} does not broadcast to upstream "
            f"{upstream.shape}") from exc


def backward_current(state: PruneState, upstream: np.ndarray) -> np.ndarray:
    if state.mask is None:
        return upstream
    return prune_backward(upstream, _broadcast_mask(state, upstream))
