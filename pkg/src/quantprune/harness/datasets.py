"""Synthetic desk-scale datasets: two-spiral classification and
band-limited super-resolution images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray


def _split(x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> Dataset:
    n = x.shape[0]
    order = rng.permutation(n)
    n_train = int(n * 0.8)
    tr, ev = order[:n_train], order[n_train:]
    return Dataset(x[tr], y[tr], x[ev], y[ev])


def gen_toy_classify(seed: int, n_samples: int, noise: float) -> Dataset:
    """Two interleaved 2-D spirals with Gaussian coordinate noise."""
    if n_samples < 4:
        raise ValueError(f"n_samples must be >= 4, got {n_samples}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    t = rng.uniform(0.15, 1.0, size=n_samples)
    theta = 3.0 * np.pi * t + np.pi * labels
    x = np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1)
    x += noise * rng.normal(size=x.shape)
    return _split(x, labels.astype(np.int64), rng)


def box_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Mean over scale x scale blocks; img is (C, H, W)."""
    c, h, w = img.shape
    return img.reshape(c, h // scale, scale, w // scale, scale).mean(axis=(2, 4))


def nearest_upsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Repeat each pixel scale x scale; inverse shape of box_downsample."""
    return np.repeat(np.repeat(img, scale, axis=-2), scale, axis=-1)


def gen_toy_superres(seed: int, n_images: int, size: int, scale: int) -> Dataset:
    """Band-limited random images (sums of <= 5 low-frequency sinusoids) as
    high-res targets; inputs are the box-downsampled versions, values in [0, 1]."""
    if size % scale != 0:
        raise ValueError(f"size {size} not divisible by scale {scale}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    targets = np.empty((n_images, 1, size, size))
    for i in range(n_images):
        k = int(rng.integers(1, 6))
        img = np.zeros((size, size))
        for _ in range(k):
            amp = rng.uniform(0.3, 1.0)
            fx, fy = rng.uniform(0.5, 2.5, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) / size + phase)
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
        targets[i, 0] = img
    inputs = np.stack([box_downsample(t, scale) for t in targets])
    return _split(inputs, targets, rng)
