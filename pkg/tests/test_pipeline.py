import numpy as np
import pytest

from quantprune import nn, prune, quantize
from quantprune.nn import LayerSpec
from quantprune.pipeline import (MIXED, PRUNE_THEN_QUANTIZE,
                                 QUANTIZE_THEN_PRUNE, NumericalError, Trainer,
                                 TrainPlan, WrappedLayer, WrapSpec,
                                 derive_order)
from quantprune.prune import PruneConfig
from quantprune.quantize import QuantizeConfig
from quantprune.tensor_ops import round_half_up


def _dense_layer(rng, n_in=4, n_out=4):
    spec = LayerSpec("dense", in_features=n_in, out_features=n_out)
    return spec, nn.init_params(spec, rng)


def test_empty_wrap_is_transparent(rng):
    spec, params = _dense_layer(rng)
    wrapped = WrappedLayer(spec, params, WrapSpec())
    x = rng.normal(size=(3, 4))
    bare = nn.layer_forward(spec, params.weight, params.bias, x)
    np.testing.assert_array_equal(wrapped.forward(x), bare)


def test_weight_prune_effective_sparsity(rng):
    spec, params = _dense_layer(rng, 6, 6)
    wrap = WrapSpec(weight_prune=PruneConfig(s_f=0.5, t_0=1, dt=1, n=1, window=1))
    wrapped = WrappedLayer(spec, params, wrap)
    x = rng.normal(size=(2, 6))
    for _ in range(3):
        wrapped.forward(x)
    w_eff = wrapped.effective_weight(advance=False)
    assert int(np.sum(w_eff == 0)) == round_half_up(0.5 * 36)
    # raw parameters stay dense
    assert int(np.sum(params.weight == 0)) == 0


def test_masked_positions_survive_quantization(rng):
    """Prune-before-quantize structurally: masked weights stay exactly zero."""
    spec, params = _dense_layer(rng, 6, 6)
    wrap = WrapSpec(
        weight_prune=PruneConfig(s_f=0.5, t_0=1, dt=1, n=1, window=1),
        weight_quantize=QuantizeConfig(bits=8, t_q=2),
    )
    wrapped = WrappedLayer(spec, params, wrap)
    x = rng.normal(size=(2, 6))
    for _ in range(4):
        wrapped.forward(x)
    w_eff = wrapped.effective_weight(advance=False)
    masked = wrapped.wp.mask == 0
    assert np.all(w_eff[masked] == 0.0)


def test_feature_mask_zeroes_outputs_for_any_input(rng):
    spec, params = _dense_layer(rng, 5, 8)
    wrap = WrapSpec(feature_prune=PruneConfig(
        s_f=0.5, t_0=1, dt=1, n=1, window=1, reduce_batch=True))
    wrapped = WrappedLayer(spec, params, wrap)
    for _ in range(3):
        wrapped.forward(rng.normal(size=(4, 5)))
    zero_cols = np.where(wrapped.fp.mask == 0)[0]
    out = wrapped.forward(rng.normal(size=(7, 5)), advance=False)
    assert np.all(out[:, zero_cols] == 0.0)


def _plan(layers, wraps, **kw):
    defaults = dict(steps=10, batch_size=4, lr=0.05, loss="mse", seed=3)
    defaults.update(kw)
    return TrainPlan(layers=layers, wraps=wraps, **defaults)


def _simple_layers():
    return [LayerSpec("dense", in_features=3, out_features=6),
            LayerSpec("relu"),
            LayerSpec("dense", in_features=6, out_features=3)]


def test_derive_order_cases():
    layers = _simple_layers()

    def plan_with(t_0, t_q):
        wraps = [WrapSpec(weight_prune=PruneConfig(s_f=0.5, t_0=t_0, dt=10, n=4),
                          weight_quantize=QuantizeConfig(bits=8, t_q=t_q)),
                 WrapSpec(), WrapSpec()]
        return _plan(layers, wraps)

    assert derive_order(plan_with(10, 100)) == PRUNE_THEN_QUANTIZE   # ends at 50
    assert derive_order(plan_with(100, 50)) == QUANTIZE_THEN_PRUNE
    assert derive_order(plan_with(40, 50)) == MIXED                  # ends at 80
    # equality boundary classifies as the non-Mixed order
    assert derive_order(plan_with(10, 50)) == PRUNE_THEN_QUANTIZE


def test_derive_order_requires_both():
    layers = _simple_layers()
    wraps = [WrapSpec(weight_prune=PruneConfig()), WrapSpec(), WrapSpec()]
    with pytest.raises(ValueError):
        derive_order(_plan(layers, wraps))


def test_excluded_layer_must_be_empty():
    layers = _simple_layers()
    wraps = [WrapSpec(weight_prune=PruneConfig()), WrapSpec(), WrapSpec()]
    with pytest.raises(ValueError, match="excluded"):
        _plan(layers, wraps, excluded_layers={0})


def test_wrapper_transparency_vs_bare_loop(rng):
    """Training with all-empty wraps reproduces a hand-rolled bare loop."""
    layers = _simple_layers()
    plan = _plan(layers, [WrapSpec() for _ in layers], steps=20, seed=11)
    train_x = np.random.default_rng(5).normal(size=(16, 3))
    train_y = train_x[:, ::-1].copy()

    trainer = Trainer(plan, train_x, train_y)
    for _ in range(20):
        trainer.one_step()

    # bare loop with the identical rng consumption order
    bare_rng = np.random.default_rng(11)
    params = [nn.init_params(spec, bare_rng) for spec in layers]
    for _ in range(20):
        idx = bare_rng.integers(0, 16, size=4)
        xb, yb = train_x[idx], train_y[idx]
        acts = [xb]
        for spec, p in zip(layers, params):
            acts.append(nn.layer_forward(spec, p.weight, p.bias, acts[-1]))
        _, g = nn.loss_and_grad("mse", acts[-1], yb)
        for spec, p, a in zip(reversed(layers), reversed(params), reversed(acts[:-1])):
            g, gw, gb = nn.layer_backward(spec, p.weight, a, g)
            if gw is not None:
                p.weight_grad += gw
            if gb is not None:
                p.bias_grad += gb
        for p in params:
            nn.sgd_step(p, 0.05)

    for layer, p in zip(trainer.net.layers, params):
        if p.weight is not None:
            np.testing.assert_array_equal(layer.params.weight, p.weight)


def test_training_deterministic():
    layers = _simple_layers()
    wraps = [WrapSpec(weight_prune=PruneConfig(s_f=0.5, t_0=5, dt=2, n=2, window=1),
                      weight_quantize=QuantizeConfig(bits=8, t_q=15)),
             WrapSpec(), WrapSpec()]
    train_x = np.random.default_rng(5).normal(size=(16, 3))
    train_y = train_x.copy()
    runs = []
    for _ in range(2):
        plan = _plan(layers, [WrapSpec(weight_prune=PruneConfig(s_f=0.5, t_0=5, dt=2, n=2, window=1),
                                       weight_quantize=QuantizeConfig(bits=8, t_q=15)),
                              WrapSpec(), WrapSpec()], steps=20)
        trainer = Trainer(plan, train_x, train_y)
        runs.append([trainer.one_step() for _ in range(20)])
    for a, b in zip(*runs):
        assert a.loss == b.loss
        assert a.grad_norms == b.grad_norms
        assert a.sparsities == b.sparsities


def test_step_counter_synchronization():
    layers = _simple_layers()
    wraps = [WrapSpec(weight_prune=PruneConfig(s_f=0.5, t_0=100, dt=1, n=1),
                      weight_quantize=QuantizeConfig(bits=8, t_q=100),
                      feature_prune=PruneConfig(s_f=0.5, t_0=100, dt=1, n=1,
                                                reduce_batch=True),
                      feature_quantize=QuantizeConfig(bits=8, t_q=100)),
             WrapSpec(), WrapSpec()]
    plan = _plan(layers, wraps, steps=7)
    train_x = np.random.default_rng(5).normal(size=(16, 3))
    trainer = Trainer(plan, train_x, train_x.copy())
    for _ in range(7):
        trainer.one_step()
        # eval passes must not advance the counters
        trainer.net.forward(train_x, advance=False)
    wrapped = trainer.net.layers[0]
    assert wrapped.wp.t == 7
    assert wrapped.wq.step == 7
    assert wrapped.fp.t == 7
    assert wrapped.fq.step == 7


def test_backward_chain_matches_ste_prune_composition(rng):
    """Gradient reaching the raw weights equals the STE/prune composition
    applied to the effective-weight gradient."""
    spec, params = _dense_layer(rng, 5, 5)
    wrap = WrapSpec(
        weight_prune=PruneConfig(s_f=0.4, t_0=1, dt=1, n=1, window=1),
        weight_quantize=QuantizeConfig(bits=8, t_q=2),
    )
    wrapped = WrappedLayer(spec, params, wrap)
    x = rng.normal(size=(3, 5))
    for _ in range(3):
        wrapped.forward(x)
    params.zero_grad()
    upstream = rng.normal(size=(3, 5)) * 100.0
    wrapped.backward(upstream)
    # recompute dL/dw_eff independently and compose the backward operators
    _, gw_eff, _ = nn.layer_backward(spec, wrapped._w_eff, x, upstream)
    expected = quantize.ste_backward(gw_eff, wrapped.wq.d, 8)
    expected = prune.prune_backward(expected, wrapped.wp.mask)
    np.testing.assert_array_equal(params.weight_grad, expected)
    # the reverse composition order is equivalent (clip preserves zero)
    alt = prune.prune_backward(gw_eff, wrapped.wp.mask)
    alt = quantize.ste_backward(alt, wrapped.wq.d, 8)
    np.testing.assert_array_equal(params.weight_grad, alt)


@pytest.mark.filterwarnings("ignore:overflow")
def test_nan_loss_aborts_with_step():
    layers = _simple_layers()
    plan = _plan(layers, [WrapSpec() for _ in layers], steps=500, lr=1e6)
    train_x = np.random.default_rng(5).normal(size=(16, 3)) * 100
    trainer = Trainer(plan, train_x, train_x.copy())
    with pytest.raises(NumericalError, match="step"):
        for _ in range(500):
            trainer.one_step()
