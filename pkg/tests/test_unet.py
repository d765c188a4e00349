import numpy as np
import pytest

from priorseg import layers, losses
from priorseg.unet import (UNetConfig, backward, forward, init_params,
                           param_count, softmax_channels, trainable_names)


def tiny_cfg():
    return UNetConfig(1, 2, levels=2, base_width=2)


def test_init_determinism():
    cfg = tiny_cfg()
    a = init_params(cfg, np.random.default_rng(3))
    b = init_params(cfg, np.random.default_rng(3))
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_init_norm_conventions():
    params = init_params(tiny_cfg(), np.random.default_rng(0))
    for k, v in params.items():
        if k.endswith("gamma") or k.endswith("running_var"):
            assert (v == 1.0).all()
        if k.endswith("beta") or k.endswith("running_mean") or k.endswith(".b"):
            assert (v == 0.0).all()


def test_init_kernel_variance_he():
    cfg = UNetConfig(4, 2, levels=2, base_width=32)
    params = init_params(cfg, np.random.default_rng(1))
    w = params["enc1.conv1.w"]  # largest layer
    fan_in = w.shape[1] * 27
    var = w.var()
    assert abs(var - 2.0 / fan_in) < 0.2 * (2.0 / fan_in)


def test_shape_contract_small():
    cfg = UNetConfig(2, 5, levels=3, base_width=2)
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 2, 8, 12, 16)).astype(np.float32)
    out = forward(params, cfg, x)
    assert out.shape == (2, 5, 8, 12, 16)


def test_forward_rejects_bad_shapes():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(params, cfg, np.zeros((1, 2, 4, 4, 4)))  # wrong channels
    with pytest.raises(ValueError):
        forward(params, cfg, np.zeros((1, 1, 5, 4, 4)))  # not divisible


def test_single_conv_matches_naive_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 4, 5, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = layers.conv3d_forward(x, w, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o in range(3):
        for d in range(4):
            for h in range(5):
                for wi in range(6):
                    ref[0, o, d, h, wi] = (
                        xp[0, :, d:d + 3, h:h + 3, wi:wi + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_eval_forward_is_pure():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(4))
    x = np.random.default_rng(5).standard_normal((1, 1, 4, 4, 4)).astype(np.float32)
    before = {k: v.copy() for k, v in params.items()}
    out1 = forward(params, cfg, x, train=False)
    out2 = forward(params, cfg, x, train=False)
    np.testing.assert_array_equal(out1, out2)
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


def test_train_forward_updates_running_stats():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(4))
    x = np.random.default_rng(5).standard_normal((1, 1, 4, 4, 4)).astype(np.float32)
    forward(params, cfg, x, train=True)
    assert not (params["enc0.bn0.running_mean"] == 0).all()


def test_softmax_examples():
    logits = np.zeros((4, 1, 1, 1))
    np.testing.assert_allclose(softmax_channels(logits), 0.25)
    two = np.array([0.0, np.log(3.0)]).reshape(2, 1, 1, 1)
    np.testing.assert_allclose(softmax_channels(two).ravel(), [0.25, 0.75],
                               atol=1e-12)
    rng = np.random.default_rng(6)
    z = rng.standard_normal((3, 2, 2, 2))
    np.testing.assert_allclose(softmax_channels(z + 5.0), softmax_channels(z),
                               atol=1e-12)
    assert np.allclose(softmax_channels(z).sum(axis=0), 1.0, atol=1e-6)


def test_zero_upstream_gradient_gives_zero_grads():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(7))
    x = np.random.default_rng(8).standard_normal((1, 1, 4, 4, 4)).astype(np.float32)
    logits, cache = forward(params, cfg, x, train=True, want_cache=True)
    grads = backward(params, cfg, cache, np.zeros_like(logits))
    assert set(grads) == set(trainable_names(params))
    for g in grads.values():
        assert (g == 0).all()


def test_backward_requires_cache():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(7))
    with pytest.raises(ValueError):
        backward(params, cfg, {}, np.zeros((1, 2, 4, 4, 4)))


def run_gradcheck(cfg, x, labels, seed, h=1e-4, rtol=1e-3, atol=1e-7):
    params = init_params(cfg, np.random.default_rng(seed), dtype=np.float64)
    target = losses.onehot(labels, cfg.out_channels)

    def loss_fn():
        logits = forward(params, cfg, x, train=True)
        return losses.msdl(softmax_channels(logits)[0], target)

    logits, cache = forward(params, cfg, x, train=True, want_cache=True)
    g = losses.msdl_grad(softmax_channels(logits)[0], target)[None]
    grads = backward(params, cfg, cache, g)
    worst = 0.0
    for name in trainable_names(params):
        p = params[name]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lp = loss_fn()
            p[idx] = orig - h
            lm = loss_fn()
            p[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name][idx]
            err = abs(fd - an)
            if err > atol + rtol * max(abs(fd), abs(an)):
                worst = max(worst, err / max(abs(fd), abs(an), 1e-12))
    return worst


def test_full_network_gradcheck():
    cfg = tiny_cfg()
    assert param_count(init_params(cfg, np.random.default_rng(0))) <= 5000
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 1, 4, 6, 4))
    labels = rng.integers(0, 2, (4, 6, 4))
    assert run_gradcheck(cfg, x, labels, seed=12) == 0.0


def test_gradients_deterministic():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(13))
    x = np.random.default_rng(14).standard_normal((1, 1, 4, 4, 4))
    outs = []
    for _ in range(2):
        p = {k: v.copy() for k, v in params.items()}
        logits, cache = forward(p, cfg, x, train=True, want_cache=True)
        grads = backward(p, cfg, cache, np.ones_like(logits))
        outs.append(grads)
    for k in outs[0]:
        np.testing.assert_array_equal(outs[0][k], outs[1][k])
