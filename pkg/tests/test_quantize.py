import numpy as np
import pytest

from quantprune.quantize import (QuantizeConfig, QuantizeState, apply_current,
                                 optimal_decimal_bits, quantize_mse,
                                 quantize_step, saturate, ste_backward,
                                 uniform_quantize)


def test_uniform_quantize_examples():
    assert uniform_quantize(np.array([0.0]), 4, 8)[0] == 0.0
    assert uniform_quantize(np.array([0.3]), 4, 8)[0] == 0.25
    assert uniform_quantize(np.array([100.0]), 4, 8)[0] == 7.9375
    assert uniform_quantize(np.array([-0.3]), 4, 8)[0] == -0.3125  # floor(-4.8) = -5


def test_uniform_quantize_idempotent_and_on_grid(rng):
    x = rng.normal(size=500) * 10.0 ** rng.uniform(-3, 3, size=500)
    for bits, d in [(4, 2), (8, 4), (12, -2)]:
        q = uniform_quantize(x, d, bits)
        np.testing.assert_array_equal(uniform_quantize(q, d, bits), q)
        k = q * 2.0 ** d
        np.testing.assert_array_equal(k, np.round(k))
        assert k.min() >= -(2 ** (bits - 1))
        assert k.max() <= 2 ** (bits - 1) - 1


def test_ste_backward_examples():
    assert ste_backward(np.array([0.0]), 4, 8)[0] == 0.0
    # N=8, d=4: bounds [-8, 7.9375]
    assert ste_backward(np.array([100.0]), 4, 8)[0] == 7.9375
    assert ste_backward(np.array([-100.0]), 4, 8)[0] == -8.0
    assert ste_backward(np.array([3.5]), 4, 8)[0] == 3.5


def test_ste_backward_passthrough():
    g = np.array([1e9])
    np.testing.assert_array_equal(ste_backward(g, None, 8), g)       # inactive
    np.testing.assert_array_equal(ste_backward(g, 4, 8, False), g)   # disabled


def test_saturate_examples():
    x = np.array([3.0, -1.0, 0.5])
    np.testing.assert_array_equal(saturate(x, 0.0, 1.0), x)
    const = np.full(10, 2.5)
    np.testing.assert_array_equal(saturate(const, 0.2, 0.8), const)
    outliers = np.zeros(100)
    outliers[-1] = 100.0
    sat = saturate(outliers, 0.0, 0.98)
    assert sat.max() <= np.quantile(outliers, 0.98)


def test_saturate_bad_quantiles():
    with pytest.raises(ValueError):
        saturate(np.array([1.0]), 0.9, 0.1)


def test_optimal_decimal_bits_examples():
    cfg = QuantizeConfig(bits=8)
    # zero quantization error first achieved at d=2
    x = np.array([0.5, -0.25, 0.75])
    assert optimal_decimal_bits(x, cfg) == 2
    assert quantize_mse(x, 2, 8) == 0.0
    assert quantize_mse(x, 1, 8) > 0.0
    # 100 is exactly representable at d=0 (and at d=-1, -2); tie rule picks
    # the smallest d in the search range, so restrict it to start at 0
    assert optimal_decimal_bits(np.array([100.0]), QuantizeConfig(bits=8, d_search=(0, 24))) == 0
    # zero tensor: all errors zero, smallest d wins
    assert optimal_decimal_bits(np.zeros(5), cfg) == cfg.d_search[0]


def test_optimal_decimal_bits_empty():
    with pytest.raises(ValueError, match="empty"):
        optimal_decimal_bits(np.array([]), QuantizeConfig())


def test_optimal_decimal_bits_matches_exhaustive_scan(rng):
    cfg = QuantizeConfig(bits=8)
    for _ in range(50):
        size = int(rng.integers(1, 65))
        x = rng.normal(size=size) * 10.0 ** rng.uniform(-3, 3)
        lo, hi = cfg.d_search
        errs = []
        for d in range(lo, hi + 1):
            q = np.clip(np.floor(x * 2.0 ** d), -128, 127) / 2.0 ** d
            errs.append(np.mean((q - x) ** 2))
        expected = lo + int(np.argmin(errs))
        assert optimal_decimal_bits(x, cfg) == expected


def test_saturation_argmin_property(rng):
    """MSE at the saturated optimum is <= MSE at the unsaturated optimum,
    both measured against the saturated target."""
    for _ in range(10):
        x = rng.normal(size=200)
        x[:3] *= 100.0
        sat_cfg = QuantizeConfig(bits=8, q_l=0.01, q_u=0.99)
        d_sat = optimal_decimal_bits(x, sat_cfg)
        d_raw = optimal_decimal_bits(x, QuantizeConfig(bits=8))
        x_sat = saturate(x, 0.01, 0.99)
        assert quantize_mse(x_sat, d_sat, 8) <= quantize_mse(x_sat, d_raw, 8)


def test_quantize_step_delayed_identity(rng):
    state = QuantizeState(QuantizeConfig(bits=8, t_q=5))
    for _ in range(4):
        x = rng.normal(size=8)
        out = quantize_step(state, x)
        np.testing.assert_array_equal(out, x)
        assert not state.active
    x5 = rng.normal(size=8)
    out = quantize_step(state, x5)
    assert state.active
    assert state.d == optimal_decimal_bits(x5, state.config)
    np.testing.assert_array_equal(out, uniform_quantize(x5, state.d, 8))


def test_quantize_step_zero_delay(rng):
    state = QuantizeState(QuantizeConfig(bits=8, t_q=0))
    x = rng.normal(size=8)
    out = quantize_step(state, x)
    assert state.active
    np.testing.assert_array_equal(out, uniform_quantize(x, state.d, 8))


def test_quantize_step_d_frozen_after_activation(rng):
    state = QuantizeState(QuantizeConfig(bits=8, t_q=2))
    quantize_step(state, rng.normal(size=8))
    activation_tensor = rng.normal(size=8) * 100.0
    quantize_step(state, activation_tensor)
    d_star = state.d
    for _ in range(5):
        x = rng.normal(size=8)
        out = quantize_step(state, x)
        assert state.d == d_star
        np.testing.assert_array_equal(out, uniform_quantize(x, d_star, 8))


def test_apply_current_does_not_advance(rng):
    state = QuantizeState(QuantizeConfig(bits=8, t_q=3))
    x = rng.normal(size=4)
    np.testing.assert_array_equal(apply_current(state, x), x)
    assert state.step == 0


def test_config_validation():
    with pytest.raises(ValueError):
        QuantizeConfig(bits=1)
    with pytest.raises(ValueError):
        QuantizeConfig(q_l=0.5, q_u=0.5)
    with pytest.raises(ValueError):
        QuantizeConfig(d_search=(5, 2))
    with pytest.raises(ValueError):
        QuantizeConfig(t_q=-1)
