"""Joint quantization-and-pruning training toolkit.

Delayed/saturated uniform fixed-point quantization, gradual magnitude
pruning of weights and features, and prune-then-quantize vs
quantize-then-prune training schedules on a minimal numpy backprop engine.
"""

from .metrics import (FootprintEntry, FootprintSpec, detect_gradient_spike,
                      memory_footprint, performance_density, psnr)
from .nn import LayerSpec, ParamSet, init_params
from .pipeline import (MIXED, PRUNE_THEN_QUANTIZE, QUANTIZE_THEN_PRUNE,
                       Trainer, TrainPlan, WrappedLayer, WrapSpec, derive_order)
from .prune import (PruneConfig, PruneState, compute_mask, prune_backward,
                    prune_step, sparsity_at, window_push)
from .quantize import (QuantizeConfig, QuantizeState, optimal_decimal_bits,
                       quantize_step, saturate, ste_backward, uniform_quantize)
from .tensor_ops import as_tensor, clip, quantile, select_k_smallest_magnitude

__all__ = [
    "FootprintEntry", "FootprintSpec", "detect_gradient_spike",
    "memory_footprint", "performance_density", "psnr",
    "LayerSpec", "ParamSet", "init_params",
    "MIXED", "PRUNE_THEN_QUANTIZE", "QUANTIZE_THEN_PRUNE",
    "Trainer", "TrainPlan", "WrappedLayer", "WrapSpec", "derive_order",
    "PruneConfig", "PruneState", "compute_mask", "prune_backward",
    "prune_step", "sparsity_at", "window_push",
    "QuantizeConfig", "QuantizeState", "optimal_decimal_bits",
    "quantize_step", "saturate", "ste_backward", "uniform_quantize",
    "as_tensor", "clip", "quantile", "select_k_smallest_magnitude",
]

__version__ = "0.1.0"
