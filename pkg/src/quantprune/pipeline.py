"""Composes quantize and prune operators around layers and runs training.

Structural order inside a layer is fixed: prune before quantize, for both
the effective weight and the output feature. Temporal order (P-Q vs Q-P)
is a property of the schedule and is derived, not hard-coded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Set

import numpy as np

from . import nn, prune, quantize
from .nn import LayerSpec, ParamSet

PRUNE_THEN_QUANTIZE = "PruneThenQuantize"
QUANTIZE_THEN_PRUNE = "QuantizeThenPrune"
MIXED = "Mixed"


class NumericalError(RuntimeError):
    """Raised when training produces non-finite values."""


@dataclass
class WrapSpec:
    weight_prune: Optional[prune.PruneConfig] = None
    weight_quantize: Optional[quantize.QuantizeConfig] = None
    feature_prune: Optional[prune.PruneConfig] = None
    feature_quantize: Optional[quantize.QuantizeConfig] = None

    def is_empty(self) -> bool:
        return (self.weight_prune is None and self.weight_quantize is None
                and self.feature_prune is None and self.feature_quantize is None)


@dataclass
class TrainPlan:
    layers: List[LayerSpec] = field(default_factory=list)
    wraps: List[WrapSpec] = field(default_factory=list)
    excluded_layers: Set[int] = field(default_factory=set)
    steps: int = 100
    batch_size: int = 32
    lr: float = 0.1
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if len(self.wraps) != len(self.layers):
            raise ValueError("one WrapSpec per layer required")
        for i in self.excluded_layers:
            if not self.wraps[i].is_empty():
                raise ValueError(f"excluded layer {i} must have an empty WrapSpec")


class WrappedLayer:
    """A layer plus its operator states. Raw parameters stay untouched;
    the effective weight is recomputed from them on every forward pass."""

    def __init__(self, spec: LayerSpec, params: ParamSet, wrap: WrapSpec):
        self.spec = spec
        self.params = params
        self.wrap = wrap
        self.wp = prune.PruneState(wrap.weight_prune) if wrap.weight_prune else None
        self.wq = quantize.QuantizeState(wrap.weight_quantize) if wrap.weight_quantize else None
        self.fp = prune.PruneState(wrap.feature_prune) if wrap.feature_prune else None
        self.fq = quantize.QuantizeState(wrap.feature_quantize) if wrap.feature_quantize else None
        self._x = None
        self._w_eff = None
        self.last_feature_grad_norm = 0.0

    def operator_states(self):
        return {"wp": self.wp, "wq": self.wq, "fp": self.fp, "fq": self.fq}

    def effective_weight(self, advance: bool) -> Optional[np.ndarray]:
        w = self.params.weight
        if w is None:
            return None
        if self.wp is not None:
            w = prune.prune_step(self.wp, w) if advance else prune.apply_current(self.wp, w)
        if self.wq is not None:
            w = quantize.quantize_step(self.wq, w) if advance else quantize.apply_current(self.wq, w)
        return w

    def forward(self, x: np.ndarray, advance: bool = True) -> np.ndarray:
        w_eff = self.effective_weight(advance)
        y = nn.layer_forward(self.spec, w_eff, self.params.bias, x)
        if self.fp is not None:
            y = prune.prune_step(self.fp, y) if advance else prune.apply_current(self.fp, y)
        if self.fq is not None:
            y = quantize.quantize_step(self.fq, y) if advance else quantize.apply_current(self.fq, y)
        if advance:
            self._x, self._w_eff = x, w_eff
        return y

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        self.last_feature_grad_norm = float(np.linalg.norm(upstream))
        g = upstream
        if self.fq is not None:
            g = quantize.ste_backward(g, self.fq.d, self.fq.config.bits,
                                      self.fq.config.ste_clip_enabled)
        if self.fp is not None:
            g = prune.backward_current(self.fp, g)
        input_grad, w_grad, b_grad = nn.layer_backward(self.spec, self._w_eff, self._x, g)
        if w_grad is not None:
            if self.wq is not None:
                w_grad = quantize.ste_backward(w_grad, self.wq.d, self.wq.config.bits,
                                               self.wq.config.ste_clip_enabled)
            if self.wp is not None:
                w_grad = prune.backward_current(self.wp, w_grad)
            self.params.weight_grad += w_grad
        if b_grad is not None:
            self.params.bias_grad += b_grad
        return input_grad


class Network:
    def __init__(self, plan: TrainPlan, rng: np.random.Generator):
        self.plan = plan
        self.layers = []
        for spec, wrap in zip(plan.layers, plan.wraps):
            params = nn.init_params(spec, rng)
            self.layers.append(WrappedLayer(spec, params, wrap))

    def forward(self, x: np.ndarray, advance: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, advance=advance)
        return x

    def backward(self, loss_grad: np.ndarray):
        g = loss_grad
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def sgd_step(self, lr: float):
        for layer in self.layers:
            nn.sgd_step(layer.params, lr)


def derive_order(plan: TrainPlan) -> str:
    """Classify the temporal schedule from operator activation times."""
    prune_cfgs, quant_cfgs = [], []
    for wrap in plan.wraps:
        prune_cfgs += [c for c in (wrap.weight_prune, wrap.feature_prune) if c]
        quant_cfgs += [c for c in (wrap.weight_quantize, wrap.feature_quantize) if c]
    if not prune_cfgs or not quant_cfgs:
        raise ValueError("derive_order needs at least one prune and one quantize config")
    prune_end = max(c.t_0 + c.n * c.dt for c in prune_cfgs)
    prune_start = min(c.t_0 for c in prune_cfgs)
    tq_min = min(c.t_q for c in quant_cfgs)
    tq_max = max(c.t_q for c in quant_cfgs)
    if prune_end <= tq_min:
        return PRUNE_THEN_QUANTIZE
    if tq_max <= prune_start:
        return QUANTIZE_THEN_PRUNE
    return MIXED


@dataclass
class StepRecord:
    step: int
    loss: float
    metric: float
    grad_norms: List[float]
    sparsities: List[float]
    d_bits: List[Optional[int]]


class Trainer:
    """Seeded mini-batch SGD over a wrapped network. Single-owner, resumable:
    all mutable state lives in the network, the RNG and the step counter."""

    def __init__(self, plan: TrainPlan, train_x: np.ndarray, train_y,
                 eval_fn=None):
        self.plan = plan
        self.train_x = train_x
        self.train_y = np.asarray(train_y)
        self.eval_fn = eval_fn
        self.rng = np.random.default_rng(plan.seed)
        self.net = Network(plan, self.rng)
        self.step = 0

    def one_step(self) -> StepRecord:
        plan = self.plan
        idx = self.rng.integers(0, self.train_x.shape[0], size=plan.batch_size)
        xb, yb = self.train_x[idx], self.train_y[idx]
        self.step += 1
        pred = self.net.forward(xb, advance=True)
        loss, grad = nn.loss_and_grad(plan.loss, pred, yb)
        if not np.isfinite(loss):
            layer_id = self._first_nonfinite_layer(xb)
            raise NumericalError(
                f"non-finite loss at step {self.step} (first bad layer: {layer_id})")
        self.net.backward(grad)
        self.net.sgd_step(plan.lr)
        metric = float(self.eval_fn(self.net)) if self.eval_fn else float("nan")
        return StepRecord(
            step=self.step,
            loss=loss,
            metric=metric,
            grad_norms=[l.last_feature_grad_norm for l in self.net.layers],
            sparsities=[l.wp.s_t if l.wp else 0.0 for l in self.net.layers],
            d_bits=[l.wq.d if l.wq else None for l in self.net.layers],
        )

    def run(self, n_steps: int) -> List[StepRecord]:
        return [self.one_step() for _ in range(n_steps)]

    def _first_nonfinite_layer(self, xb: np.ndarray):
        x = xb
        for i, layer in enumerate(self.net.layers):
            x = layer.forward(x, advance=False)
            if not np.all(np.isfinite(x)):
                return f"layer {i} ({layer.spec.kind})"
        return "loss"
