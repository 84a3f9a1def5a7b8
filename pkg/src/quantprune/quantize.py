"""Quantization operator: uniform fixed-point grid, STE backward, delayed
activation with optimal-decimal-bit search, and quantile saturation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .tensor_ops import clip, quantile


@dataclass
class QuantizeConfig:
    bits: int = 8                      # total bits N
    t_q: int = 0                       # quantize step (delay)
    q_l: float = 0.0                   # lower saturation quantile
    q_u: float = 1.0                   # upper saturation quantile
    d_search: Tuple[int, int] = (-8, 24)  # inclusive decimal-bit range
    ste_clip_enabled: bool = True

    def __post_init__(self):
        if not 2 <= self.bits <= 32:
            raise ValueError(f"bits must be in [2, 32], got {self.bits}")
        if self.t_q < 0:
            raise ValueError(f"t_q must be non-negative, got {self.t_q}")
        if not (0.0 <= self.q_l < self.q_u <= 1.0):
            raise ValueError(f"need 0 <= q_l < q_u <= 1, got ({self.q_l}, {self.q_u})")
        lo, hi = self.d_search
        if lo > hi:
            raise ValueError(f"empty d_search range {self.d_search}")


@dataclass
class QuantizeState:
    """Per-tensor quantizer: delayed until step t_q, then d is frozen."""

    config: QuantizeConfig = field(default_factory=QuantizeConfig)
    d: Optional[int] = None
    step: int = 0
    active: bool = False


def uniform_quantize(x: np.ndarray, d: int, bits: int) -> np.ndarray:
    """clip(floor(x * 2^d), -2^(N-1), 2^(N-1)-1) / 2^d, elementwise.

    Floor semantics (round toward -inf); every output is k / 2^d for an
    integer k in the signed N-bit range.
    """
    scale = float(2.0 ** d)
    lo = -(2.0 ** (bits - 1))
    hi = 2.0 ** (bits - 1) - 1.0
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * scale), lo, hi) / scale


def ste_backward(upstream: np.ndarray, d: Optional[int], bits: int,
                 enabled: bool = True) -> np.ndarray:
    """Straight-through gradient: clip to the representable value range.

    Bounds are [-2^(N-d-1), 2^(N-d-1) - 2^(-d)]. Pass-through when the
    quantizer is inactive (d unset) or clipping is disabled.
    """
    if d is None or not enabled:
        return upstream
    lo = -(2.0 ** (bits - d - 1))
    hi = 2.0 ** (bits - d - 1) - 2.0 ** (-d)
    return np.clip(upstream, lo, hi)


def saturate(x: np.ndarray, q_l: float, q_u: float) -> np.ndarray:
    """Clip to the inter-quantile range, shielding the d-search from outliers."""
    if q_l >= q_u:
        raise ValueError(f"need q_l < q_u, got ({q_l}, {q_u})")
    return clip(x, quantile(x, q_l), quantile(x, q_u))


def quantize_mse(x: np.ndarray, d: int, bits: int) -> float:
    diff = uniform_quantize(x, d, bits) - x
    return float(np.mean(diff * diff))


def optimal_decimal_bits(x: np.ndarray, cfg: QuantizeConfig) -> int:
    """argmin over d in d_search of the quantization MSE on the saturated
    tensor; ties break toward the smallest d (widest representable range)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    x_sat = saturate(x, cfg.q_l, cfg.q_u)
    lo, hi = cfg.d_search
    best_d, best_mse = lo, np.inf
    for d in range(lo, hi + 1):
        mse = quantize_mse(x_sat, d, cfg.bits)
        if mse < best_mse:
            best_d, best_mse = d, mse
    return best_d


def quantize_step(state: QuantizeState, x_t: np.ndarray) -> np.ndarray:
    """One operator call: identity before t_q, then quantize with frozen d.

    The decimal bits are computed once, from the tensor seen at the
    activation step, and never change afterwards.
    """
    state.step += 1
    if state.step < state.config.t_q:
        return x_t
    if not state.active:
        state.d = optimal_decimal_bits(x_t, state.config)
        state.active = True
    return uniform_quantize(x_t, state.d, state.config.bits)


def apply_current(state: QuantizeState, x: np.ndarray) -> np.ndarray:
    """Apply the quantizer without advancing its step counter (eval passes)."""
    if not state.active:
        return x
    return uniform_quantize(x, state.d, state.config.bits)
