import numpy as np
import pytest

from quantprune import nn


def finite_diff_weight_grad(spec, weight, bias, x, upstream, h=1e-5):
    """Central-difference gradient of sum(forward * upstream) w.r.t. weight."""
    grad = np.zeros_like(weight)
    it = np.nditer(weight, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        w_plus, w_minus = weight.copy(), weight.copy()
        w_plus[idx] += h
        w_minus[idx] -= h
        f_plus = np.sum(nn.layer_forward(spec, w_plus, bias, x) * upstream)
        f_minus = np.sum(nn.layer_forward(spec, w_minus, bias, x) * upstream)
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def finite_diff_input_grad(spec, weight, bias, x, upstream, h=1e-5):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        x_plus, x_minus = x.copy(), x.copy()
        x_plus[idx] += h
        x_minus[idx] -= h
        f_plus = np.sum(nn.layer_forward(spec, weight, bias, x_plus) * upstream)
        f_minus = np.sum(nn.layer_forward(spec, weight, bias, x_minus) * upstream)
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
