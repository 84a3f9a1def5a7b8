"""Experiment runner: builds plans from configs, trains, writes
metrics.csv / summary.json / checkpoint, and runs the order sweep."""

from __future__ import annotations

import copy
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .. import metrics as qmetrics
from ..nn import LayerSpec
from ..pipeline import Trainer, TrainPlan, WrapSpec, derive_order
from ..prune import schedule_boundaries
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .datasets import Dataset, gen_toy_classify, gen_toy_superres, nearest_upsample

CSV_HEADER = "step,loss,metric,layer_id,grad_norm,sparsity,d_bits,footprint_mb,pd"


def build_layers(cfg: ExperimentConfig) -> List[LayerSpec]:
    if cfg.task == "toy_classify":
        h = cfg.model["hidden"]
        return [
            LayerSpec("dense", in_features=2, out_features=h),
            LayerSpec("relu"),
            LayerSpec("dense", in_features=h, out_features=h),
            LayerSpec("relu"),
            LayerSpec("dense", in_features=h, out_features=2),
        ]
    c = cfg.model["channels"]
    return [
        LayerSpec("conv2d", in_channels=1, out_channels=c, kernel_size=3, padding=1),
        LayerSpec("relu"),
        LayerSpec("conv2d", in_channels=c, out_channels=1, kernel_size=3, padding=1),
    ]


def build_plan(cfg: ExperimentConfig) -> TrainPlan:
    layers = build_layers(cfg)
    param_idx = [i for i, l in enumerate(layers) if l.kind != "relu"]
    if cfg.excluded_layers == "auto":
        excluded = {0, len(param_idx) - 1} if len(param_idx) > 1 else set()
    else:
        for j in cfg.excluded_layers:
            if j < 0 or j >= len(param_idx):
                raise ValueError(
                    f"excluded layer ordinal {j} out of range (have "
                    f"{len(param_idx)} parameterized layers)")
        excluded = set(cfg.excluded_layers)

    wraps = [WrapSpec() for _ in layers]
    for j, li in enumerate(param_idx):
        if j in excluded:
            continue
        wraps[li].weight_prune = copy.deepcopy(cfg.weight_prune)
        wraps[li].weight_quantize = copy.deepcopy(cfg.weight_quantize)
        # feature operators act on the layer's final output: the following
        # relu when one exists, otherwise the layer itself
        fi = li + 1 if li + 1 < len(layers) and layers[li + 1].kind == "relu" else li
        fp = copy.deepcopy(cfg.feature_prune)
        if fp is not None:
            fp.reduce_batch = True
        wraps[fi].feature_prune = fp
        wraps[fi].feature_quantize = copy.deepcopy(cfg.feature_quantize)

    return TrainPlan(
        layers=layers,
        wraps=wraps,
        excluded_layers={param_idx[j] for j in excluded},
        steps=cfg.train["steps"],
        batch_size=cfg.train["batch_size"],
        lr=cfg.train["lr"],
        loss=cfg.train["loss"],
        seed=cfg.seed,
    )


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.task == "toy_classify":
        ds = gen_toy_classify(cfg.seed, **cfg.dataset)
    else:
        ds = gen_toy_superres(cfg.seed, **cfg.dataset)
        scale = cfg.dataset["scale"]
        ds = Dataset(
            train_x=nearest_upsample(ds.train_x, scale), train_y=ds.train_y,
            eval_x=nearest_upsample(ds.eval_x, scale), eval_y=ds.eval_y,
        )
    return ds


def make_eval_fn(cfg: ExperimentConfig, ds: Dataset):
    if cfg.task == "toy_classify":
        def eval_fn(net):
            logits = net.forward(ds.eval_x, advance=False)
            return 100.0 * qmetrics.accuracy(logits, ds.eval_y)
    else:
        def eval_fn(net):
            pred = net.forward(ds.eval_x, advance=False)
            return qmetrics.psnr(pred, ds.eval_y, peak=1.0)
    return eval_fn


def make_trainer(cfg: ExperimentConfig):
    plan = build_plan(cfg)
    ds = build_dataset(cfg)
    return Trainer(plan, ds.train_x, ds.train_y, eval_fn=make_eval_fn(cfg, ds)), ds


def _activation_counts(trainer: Trainer, ds: Dataset) -> List[int]:
    """Per-layer output element counts for one declared input sample."""
    x = ds.eval_x[:1]
    counts = []
    for layer in trainer.net.layers:
        x = layer.forward(x, advance=False)
        counts.append(int(x.size))
    return counts


def current_footprint(trainer: Trainer, act_counts: List[int]) -> qmetrics.FootprintSpec:
    spec = qmetrics.FootprintSpec()
    for i, layer in enumerate(trainer.net.layers):
        if layer.params.weight is not None:
            bits = (layer.wq.config.bits if layer.wq is not None and layer.wq.active
                    else 32)
            sparsity = layer.wp.s_t if layer.wp is not None else 0.0
            spec.weights.append(qmetrics.FootprintEntry(
                count=layer.params.weight.size, bits=bits, sparsity=sparsity))
        if layer.params.bias is not None:
            spec.weights.append(qmetrics.FootprintEntry(
                count=layer.params.bias.size, bits=32))
        bits = (layer.fq.config.bits if layer.fq is not None and layer.fq.active
                else 32)
        sparsity = layer.fp.s_t if layer.fp is not None else 0.0
        spec.activations.append(qmetrics.FootprintEntry(
            count=act_counts[i], bits=bits, sparsity=sparsity))
    return spec


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _atomic_write(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(data)
    os.replace(tmp, path)


def feature_prune_boundaries(plan: TrainPlan) -> List[int]:
    bounds = set()
    for wrap in plan.wraps:
        if wrap.feature_prune is not None:
            bounds.update(schedule_boundaries(wrap.feature_prune))
    return sorted(bounds)


def spike_verdicts(cfg: ExperimentConfig, plan: TrainPlan,
                   grad_series: List[float]):
    """Gradient-spike verdicts at feature-pruning boundaries; boundaries whose
    windows fall outside the run are reported as null."""
    spike_cfg = cfg.spike or {"pre_window": 50, "post_window": 5, "ratio": 1.5}
    bounds = feature_prune_boundaries(plan)
    verdicts = {}
    for b in bounds:
        idx = b - 1  # series is 0-based, steps are 1-based
        if idx - spike_cfg["pre_window"] < 0 or idx + spike_cfg["post_window"] >= len(grad_series):
            verdicts[str(b)] = None
            continue
        result = qmetrics.detect_gradient_spike(
            grad_series, {idx}, spike_cfg["pre_window"],
            spike_cfg["post_window"], spike_cfg["ratio"])
        verdicts[str(b)] = bool(result[idx])
    return verdicts


def run(cfg: ExperimentConfig, resume: Optional[str] = None,
        out_dir: Optional[str] = None) -> dict:
    """Train per config; write metrics.csv, summary.json and a checkpoint.

    When resuming, metrics.csv covers the resumed steps only.
    """
    out = out_dir or cfg.out_dir
    trainer, ds = make_trainer(cfg)
    if resume is not None:
        load_checkpoint(resume, trainer)
    act_counts = _activation_counts(trainer, ds)

    rows = [CSV_HEADER]
    grad_series = []
    last_record = None
    while trainer.step < trainer.plan.steps:
        rec = trainer.one_step()
        last_record = rec
        fp = qmetrics.memory_footprint(current_footprint(trainer, act_counts))
        pd = qmetrics.performance_density(rec.metric, fp)
        for layer_id in range(len(trainer.net.layers)):
            rows.append(",".join([
                str(rec.step), _fmt(rec.loss), _fmt(rec.metric), str(layer_id),
                _fmt(rec.grad_norms[layer_id]), _fmt(rec.sparsities[layer_id]),
                _fmt(rec.d_bits[layer_id]), _fmt(fp), _fmt(pd),
            ]))
        grad_series.append(max(rec.grad_norms))

    _atomic_write(os.path.join(out, "metrics.csv"), "\n".join(rows) + "\n")
    save_checkpoint(os.path.join(out, "checkpoint.qpck"), trainer)

    try:
        order = derive_order(trainer.plan)
    except ValueError:
        order = None

    final_fp_spec = current_footprint(trainer, act_counts)
    final_fp = qmetrics.memory_footprint(final_fp_spec)
    final_metric = trainer.eval_fn(trainer.net)
    achieved = {}
    for i, layer in enumerate(trainer.net.layers):
        if layer.wp is not None and layer.params.weight is not None:
            w_eff = layer.effective_weight(advance=False)
            achieved[str(i)] = float(np.mean(w_eff == 0.0))
    summary = {
        "task": cfg.task,
        "seed": cfg.seed,
        "steps": trainer.step,
        "order": order,
        "metric": final_metric,
        "footprint_mb": final_fp,
        "footprint_weights_mb": qmetrics.memory_footprint(
            qmetrics.FootprintSpec(weights=final_fp_spec.weights,
                                   activations=[])) if final_fp_spec.weights else 0.0,
        "footprint_activations_mb": qmetrics.memory_footprint(
            qmetrics.FootprintSpec(weights=[],
                                   activations=final_fp_spec.activations)),
        "pd": qmetrics.performance_density(final_metric, final_fp),
        "achieved_weight_sparsity": achieved,
        "final_loss": last_record.loss if last_record else None,
        "spike_verdicts": spike_verdicts(cfg, trainer.plan, grad_series)
        if resume is None else {},
    }
    _atomic_write(os.path.join(out, "summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def evaluate(cfg: ExperimentConfig, checkpoint_path: str) -> dict:
    trainer, _ = make_trainer(cfg)
    load_checkpoint(checkpoint_path, trainer)
    return {"step": trainer.step, "metric": trainer.eval_fn(trainer.net)}


def mirror_config(raw: dict) -> dict:
    """Swap the temporal anchors: pruning starts where quantization used to
    activate and vice versa, keeping intervals and repetitions."""
    out = copy.deepcopy(raw)
    wrap = out.get("wrap", {})
    prune_starts = [wrap[k]["t_0"] for k in ("weight_prune", "feature_prune")
                    if wrap.get(k)]
    quant_steps = [wrap[k]["t_q"] for k in ("weight_quantize", "feature_quantize")
                   if wrap.get(k)]
    if not prune_starts or not quant_steps:
        raise ValueError("sweep-order needs both prune and quantize configs")
    new_t0, new_tq = min(quant_steps), min(prune_starts)
    for k in ("weight_prune", "feature_prune"):
        if wrap.get(k):
            wrap[k]["t_0"] = new_t0
    for k in ("weight_quantize", "feature_quantize"):
        if wrap.get(k):
            wrap[k]["t_q"] = new_tq
    return out


def sweep_order(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                threads: int = 1) -> dict:
    """Run the schedule and its temporal mirror side by side."""
    out = out_dir or cfg.out_dir
    raw_a = copy.deepcopy(cfg.raw)
    raw_b = mirror_config(cfg.raw)
    variants = []
    for label, raw in (("a", raw_a), ("b", raw_b)):
        sub = ExperimentConfig(raw)
        variants.append((label, sub, os.path.join(out, label)))

    def _one(item):
        label, sub, sub_out = item
        return label, run(sub, out_dir=sub_out)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(_one, variants))
    else:
        results = dict(map(_one, variants))

    report = {
        label: {
            "order": results[label]["order"],
            "metric": results[label]["metric"],
            "footprint_mb": results[label]["footprint_mb"],
            "pd": results[label]["pd"],
            "achieved_weight_sparsity": results[label]["achieved_weight_sparsity"],
        }
        for label in results
    }
    _atomic_write(os.path.join(out, "sweep.json"),
                  json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
