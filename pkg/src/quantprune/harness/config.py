"""Experiment configuration: JSON schema, strict validation, defaults.

Unknown keys are rejected with the offending key path so a typo never
silently disables an operator mid-training.
"""

from __future__ import annotations

import copy
import json
from typing import Optional

from ..prune import PruneConfig
from ..quantize import QuantizeConfig


class ConfigError(ValueError):
    """Malformed experiment configuration; message names the bad field."""


_PRUNE_KEYS = {
    "s_f": float, "t_0": int, "dt": int, "n": int, "window": int,
    "gamma": float, "mode": str, "channel_axis": int,
}
_QUANT_KEYS = {
    "bits": int, "t_q": int, "q_l": float, "q_u": float,
    "d_min": int, "d_max": int, "ste_clip": bool,
}
_TRAIN_KEYS = {"steps": int, "batch_size": int, "lr": float, "loss": str}
_DATASET_KEYS = {
    "toy_classify": {"n_samples": int, "noise": float},
    "toy_superres": {"n_images": int, "size": int, "scale": int},
}
_MODEL_KEYS = {
    "toy_classify": {"hidden": int},
    "toy_superres": {"channels": int},
}
_SPIKE_KEYS = {"pre_window": int, "post_window": int, "ratio": float}
_WRAP_SLOTS = ("weight_prune", "weight_quantize", "feature_prune", "feature_quantize")
_TOP_KEYS = {"task", "seed", "out_dir", "dataset", "model", "train", "wrap",
             "excluded_layers", "spike"}

DEFAULTS = {
    "toy_classify": {
        "seed": 0,
        "dataset": {"n_samples": 512, "noise": 0.05},
        "model": {"hidden": 32},
        "train": {"steps": 1500, "batch_size": 64, "lr": 0.3, "loss": "softmax_xent"},
    },
    "toy_superres": {
        "seed": 0,
        "dataset": {"n_images": 12, "size": 16, "scale": 2},
        "model": {"channels": 8},
        "train": {"steps": 3000, "batch_size": 16, "lr": 0.3, "loss": "mse"},
    },
}


def _check_keys(section: dict, allowed, path: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key!r}")


def _coerce(section: dict, types: dict, path: str) -> dict:
    _check_keys(section, types, path)
    out = {}
    for key, value in section.items():
        want = types[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is int and isinstance(value, bool):
            raise ConfigError(f"{path}.{key} must be {want.__name__}, got bool")
        if not isinstance(value, want):
            raise ConfigError(
                f"{path}.{key} must be {want.__name__}, got {type(value).__name__}")
        out[key] = value
    return out


def parse_prune(section: Optional[dict], path: str) -> Optional[PruneConfig]:
    if section is None:
        return None
    fields = _coerce(section, _PRUNE_KEYS, path)
    try:
        return PruneConfig(**fields)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_quantize(section: Optional[dict], path: str) -> Optional[QuantizeConfig]:
    if section is None:
        return None
    fields = _coerce(section, _QUANT_KEYS, path)
    d_min = fields.pop("d_min", -8)
    d_max = fields.pop("d_max", 24)
    fields["d_search"] = (d_min, d_max)
    if "ste_clip" in fields:
        fields["ste_clip_enabled"] = fields.pop("ste_clip")
    try:
        return QuantizeConfig(**fields)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


class ExperimentConfig:
    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        _check_keys(raw, _TOP_KEYS, "config")
        task = raw.get("task")
        if task not in DEFAULTS:
            raise ConfigError(
                f"config.task must be one of {sorted(DEFAULTS)}, got {task!r}")
        self.task = task
        base = copy.deepcopy(DEFAULTS[task])

        self.seed = raw.get("seed", base["seed"])
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("config.seed must be int")
        self.out_dir = raw.get("out_dir", "runs/out")
        if not isinstance(self.out_dir, str):
            raise ConfigError("config.out_dir must be str")

        self.dataset = dict(base["dataset"])
        self.dataset.update(_coerce(raw.get("dataset", {}),
                                    _DATASET_KEYS[task], "config.dataset"))
        self.model = dict(base["model"])
        self.model.update(_coerce(raw.get("model", {}),
                                  _MODEL_KEYS[task], "config.model"))
        self.train = dict(base["train"])
        self.train.update(_coerce(raw.get("train", {}), _TRAIN_KEYS, "config.train"))
        if self.train["steps"] < 1 or self.train["batch_size"] < 1:
            raise ConfigError("config.train.steps and batch_size must be >= 1")
        if self.train["loss"] not in ("mse", "softmax_xent"):
            raise ConfigError(f"config.train.loss unknown: {self.train['loss']!r}")

        wrap = raw.get("wrap", {})
        if not isinstance(wrap, dict):
            raise ConfigError("config.wrap must be an object")
        _check_keys(wrap, _WRAP_SLOTS, "config.wrap")
        self.weight_prune = parse_prune(wrap.get("weight_prune"), "config.wrap.weight_prune")
        self.feature_prune = parse_prune(wrap.get("feature_prune"), "config.wrap.feature_prune")
        self.weight_quantize = parse_quantize(wrap.get("weight_quantize"),
                                              "config.wrap.weight_quantize")
        self.feature_quantize = parse_quantize(wrap.get("feature_quantize"),
                                               "config.wrap.feature_quantize")

        excluded = raw.get("excluded_layers", "auto")
        if excluded == "auto":
            self.excluded_layers = "auto"
        elif isinstance(excluded, list) and all(
                isinstance(i, int) and not isinstance(i, bool) for i in excluded):
            self.excluded_layers = sorted(set(excluded))
        else:
            raise ConfigError('config.excluded_layers must be "auto" or a list of ints')

        spike = raw.get("spike")
        self.spike = None
        if spike is not None:
            fields = _coerce(spike, _SPIKE_KEYS, "config.spike")
            self.spike = {"pre_window": 50, "post_window": 5, "ratio": 1.5}
            self.spike.update(fields)

        self.raw = raw

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
        return cls(raw)
