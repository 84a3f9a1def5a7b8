"""Minimal layered network: dense / conv2d / relu with analytic backward.

Shapes: dense inputs are (batch, in_features); conv2d inputs are
(batch, in_channels, height, width). All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor_ops import as_tensor


@dataclass
class LayerSpec:
    kind: str  # dense | conv2d | relu
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d", "relu"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.in_features <= 0 or self.out_features <= 0):
            raise ValueError("dense layer needs positive in/out features")
        if self.kind == "conv2d":
            if self.in_channels <= 0 or self.out_channels <= 0 or self.kernel_size <= 0:
                raise ValueError("conv2d layer needs positive channel/kernel extents")
            if self.stride <= 0 or self.padding < 0:
                raise ValueError("conv2d stride must be positive, padding non-negative")


@dataclass
class ParamSet:
    """Raw parameters plus gradient accumulators of matching shape."""

    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    weight_grad: Optional[np.ndarray] = None
    bias_grad: Optional[np.ndarray] = None

    def zero_grad(self):
        if self.weight is not None:
            self.weight_grad = np.zeros_like(self.weight)
        if self.bias is not None:
            self.bias_grad = np.zeros_like(self.bias)


def init_params(spec: LayerSpec, rng: np.random.Generator) -> ParamSet:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)); relu has no params."""
    if spec.kind == "relu":
        return ParamSet()
    if spec.kind == "dense":
        fan_in, fan_out = spec.in_features, spec.out_features
        shape = (spec.in_features, spec.out_features)
        bias_shape = (spec.out_features,)
    else:
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        fan_out = spec.out_channels * k * k
        shape = (spec.out_channels, spec.in_channels, k, k)
        bias_shape = (spec.out_channels,)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    params = ParamSet(weight=rng.uniform(-bound, bound, size=shape))
    if spec.has_bias:
        params.bias = np.zeros(bias_shape)
    params.zero_grad()
    return params


def _conv_out_extent(in_extent: int, kernel: int, stride: int, padding: int) -> int:
    padded = in_extent + 2 * padding
    if kernel > padded:
        raise ValueError(f"conv2d kernel {kernel} exceeds padded input extent {padded}")
    return (padded - kernel) // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C, kernel, kernel, H_out, W_out) patch view."""
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    # windows: (B, C, H_out_full, W_out_full, k, k)
    windows = windows[:, :, ::stride, ::stride, :, :]
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3))


def layer_forward(spec: LayerSpec, weight: Optional[np.ndarray],
                  bias: Optional[np.ndarray], x: np.ndarray) -> np.ndarray:
    if spec.kind == "relu":
        return np.maximum(x, 0.0)
    if spec.kind == "dense":
        if x.ndim != 2 or x.shape[1] != spec.in_features:
            raise ValueError(
                f"dense layer expects input (batch, {spec.in_features}), got {x.shape}")
        out = x @ weight
        if bias is not None:
            out = out + bias
        return out
    # conv2d, cross-correlation
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(
            f"conv2d layer expects input (batch, {spec.in_channels}, H, W), got {x.shape}")
    _conv_out_extent(x.shape[2], spec.kernel_size, spec.stride, spec.padding)
    _conv_out_extent(x.shape[3], spec.kernel_size, spec.stride, spec.padding)
    cols = _im2col(x, spec.kernel_size, spec.stride, spec.padding)
    out = np.einsum("bcklhw,ockl->bohw", cols, weight, optimize=True)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return out


def layer_backward(spec: LayerSpec, weight: Optional[np.ndarray], x: np.ndarray,
                   upstream: np.ndarray):
    """Returns (input_grad, weight_grad, bias_grad) for the given forward input."""
    if spec.kind == "relu":
        expected = x.shape
        if upstream.shape != expected:
            raise ValueError(f"relu upstream shape {upstream.shape} != {expected}")
        return upstream * (x > 0.0), None, None

    if spec.kind == "dense":
        if upstream.shape != (x.shape[0], spec.out_features):
            raise ValueError(
                f"dense upstream shape {upstream.shape} != "
                f"{(x.shape[0], spec.out_features)}")
        input_grad = upstream @ weight.T
        weight_grad = x.T @ upstream
        bias_grad = upstream.sum(axis=0) if spec.has_bias else None
        return input_grad, weight_grad, bias_grad

    # conv2d
    b, _, h, w = x.shape
    h_out = _conv_out_extent(h, spec.kernel_size, spec.stride, spec.padding)
    w_out = _conv_out_extent(w, spec.kernel_size, spec.stride, spec.padding)
    if upstream.shape != (b, spec.out_channels, h_out, w_out):
        raise ValueError(
            f"conv2d upstream shape {upstream.shape} != "
            f"{(b, spec.out_channels, h_out, w_out)}")
    cols = _im2col(x, spec.kernel_size, spec.stride, spec.padding)
    weight_grad = np.einsum("bcklhw,bohw->ockl", cols, upstream, optimize=True)
    bias_grad = upstream.sum(axis=(0, 2, 3)) if spec.has_bias else None

    # scatter upstream back through the patches
    pad = spec.padding
    x_pad_grad = np.zeros((b, spec.in_channels, h + 2 * pad, w + 2 * pad))
    contrib = np.einsum("bohw,ockl->bcklhw", upstream, weight, optimize=True)
    k, s = spec.kernel_size, spec.stride
    for ki in range(k):
        for kj in range(k):
            x_pad_grad[:, :, ki:ki + s * h_out:s, kj:kj + s * w_out:s] += contrib[:, :, ki, kj]
    input_grad = x_pad_grad[:, :, pad:pad + h, pad:pad + w] if pad > 0 else x_pad_grad
    return input_grad, weight_grad, bias_grad


def loss_and_grad(kind: str, prediction: np.ndarray, target):
    """Returns (scalar loss, gradient w.r.t. prediction)."""
    if kind == "mse":
        target = np.asarray(target, dtype=np.float64)
        if prediction.shape != target.shape:
            raise ValueError(f"mse shapes differ: {prediction.shape} vs {target.shape}")
        diff = prediction - target
        loss = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size
        return loss, grad

    if kind == "softmax_xent":
        labels = np.asarray(target, dtype=np.int64).ravel()
        if prediction.ndim != 2 or labels.shape[0] != prediction.shape[0]:
            raise ValueError("softmax_xent expects (batch, classes) logits and batch labels")
        n, c = prediction.shape
        if np.any(labels < 0) or np.any(labels >= c):
            raise ValueError(f"class index out of range [0, {c})")
        shifted = prediction - prediction.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        loss = float(-np.mean(log_probs[np.arange(n), labels]))
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        return loss, grad / n

    raise ValueError(f"unknown loss kind {kind!r}")


def sgd_step(params: ParamSet, lr: float):
    """p <- p - lr * g; gradients zeroed afterwards."""
    if params.weight is not None:
        params.weight -= lr * params.weight_grad
    if params.bias is not None:
        params.bias -= lr * params.bias_grad
    params.zero_grad()
