"""3D U-Net: configurable depth/width, exact analytic backward pass.

Encoder: `levels` resolution levels, two 3x3x3 conv+BN+ReLU blocks each,
2x2x2 max-pool between levels. Decoder: per level a 2x2x2 transposed conv,
skip concatenation, two conv blocks; a final 1x1x1 projection emits the
logits. Same padding throughout, so spatial dims are preserved end to end.
"""

from dataclasses import dataclass

import numpy as np

from . import layers


@dataclass
class UNetConfig:
    in_channels: int
    out_channels: int
    levels: int = 4
    base_width: int = 8

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.levels < 2:
            raise ValueError("need at least 2 levels")

    def width(self, level):
        return self.base_width * (2 ** level)

    def to_dict(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "levels": self.levels, "base_width": self.base_width}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _he_kernel(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _init_conv(params, rng, name, ci, co, k, dtype):
    params[f"{name}.w"] = _he_kernel(rng, (co, ci, k, k, k), ci * k ** 3, dtype)
    params[f"{name}.b"] = np.zeros(co, dtype=dtype)


def _init_bn(params, name, c, dtype):
    params[f"{name}.gamma"] = np.ones(c, dtype=dtype)
    params[f"{name}.beta"] = np.zeros(c, dtype=dtype)
    params[f"{name}.running_mean"] = np.zeros(c, dtype=dtype)
    params[f"{name}.running_var"] = np.ones(c, dtype=dtype)


def init_params(cfg, rng, dtype=np.float32):
    """He fan-in kernels, zero biases, identity norm parameters."""
    params = {}
    for l in range(cfg.levels):
        ci = cfg.in_channels if l == 0 else cfg.width(l - 1)
        w = cfg.width(l)
        _init_conv(params, rng, f"enc{l}.conv0", ci, w, 3, dtype)
        _init_bn(params, f"enc{l}.bn0", w, dtype)
        _init_conv(params, rng, f"enc{l}.conv1", w, w, 3, dtype)
        _init_bn(params, f"enc{l}.bn1", w, dtype)
    for l in range(cfg.levels - 1):
        w = cfg.width(l)
        wu = cfg.width(l + 1)
        params[f"dec{l}.up.w"] = _he_kernel(rng, (wu, w, 2, 2, 2), wu * 8, dtype)
        params[f"dec{l}.up.b"] = np.zeros(w, dtype=dtype)
        _init_conv(params, rng, f"dec{l}.conv0", 2 * w, w, 3, dtype)
        _init_bn(params, f"dec{l}.bn0", w, dtype)
        _init_conv(params, rng, f"dec{l}.conv1", w, w, 3, dtype)
        _init_bn(params, f"dec{l}.bn1", w, dtype)
    _init_conv(params, rng, "out", cfg.width(0), cfg.out_channels, 1, dtype)
    return params


def trainable_names(params):
    return [k for k in params if "running_" not in k]


def param_count(params):
    return sum(params[k].size for k in trainable_names(params))


def _block_forward(params, name_conv, name_bn, x, train, cache):
    y = layers.conv3d_forward(x, params[f"{name_conv}.w"], params[f"{name_conv}.b"])
    if cache is not None:
        cache[f"{name_conv}.x"] = x
    y, bn_cache = layers.bn_forward(y, params[f"{name_bn}.gamma"],
                                    params[f"{name_bn}.beta"],
                                    params[f"{name_bn}.running_mean"],
                                    params[f"{name_bn}.running_var"], train)
    out, relu_cache = layers.relu_forward(y)
    if cache is not None:
        cache[name_bn] = bn_cache
        cache[f"{name_bn}.relu"] = relu_cache
    return out


def _block_backward(params, name_conv, name_bn, g, cache, grads):
    g = layers.relu_backward(cache[f"{name_bn}.relu"], g)
    g, ggamma, gbeta = layers.bn_backward(cache[name_bn], g)
    grads[f"{name_bn}.gamma"] = ggamma
    grads[f"{name_bn}.beta"] = gbeta
    gx, gw, gb = layers.conv3d_backward(cache[f"{name_conv}.x"],
                                        params[f"{name_conv}.w"], g)
    grads[f"{name_conv}.w"] = gw
    grads[f"{name_conv}.b"] = gb
    return gx


def forward(params, cfg, x, train=False, want_cache=False):
    """Run the network; returns logits, or (logits, cache) if want_cache.

    Train mode updates batch-norm running statistics in place; eval mode
    mutates nothing and is a pure function of (params, x).
    """
    x = np.asarray(x)
    if x.ndim != 5 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected (B,{cfg.in_channels},D,H,W) input, got {x.shape}")
    div = 2 ** (cfg.levels - 1)
    if any(d % div for d in x.shape[2:]):
        raise ValueError(f"spatial dims {x.shape[2:]} not divisible by {div}")
    cache = {} if want_cache else None
    skips = []
    h = x
    for l in range(cfg.levels):
        if l > 0:
            h, pool_cache = layers.maxpool2_forward(h)
            if want_cache:
                cache[f"pool{l}"] = pool_cache
        h = _block_forward(params, f"enc{l}.conv0", f"enc{l}.bn0", h, train, cache)
        h = _block_forward(params, f"enc{l}.conv1", f"enc{l}.bn1", h, train, cache)
        if l < cfg.levels - 1:
            skips.append(h)
    for l in reversed(range(cfg.levels - 1)):
        up = layers.upconv2_forward(h, params[f"dec{l}.up.w"], params[f"dec{l}.up.b"])
        if want_cache:
            cache[f"dec{l}.up.x"] = h
        h = np.concatenate([skips[l], up], axis=1)
        h = _block_forward(params, f"dec{l}.conv0", f"dec{l}.bn0", h, train, cache)
        h = _block_forward(params, f"dec{l}.conv1", f"dec{l}.bn1", h, train, cache)
    logits = layers.conv3d_forward(h, params["out.w"], params["out.b"])
    if want_cache:
        cache["out.x"] = h
        return logits, cache
    return logits


def backward(params, cfg, cache, g_logits):
    """Parameter gradients for a forward(want_cache=True) trace."""
    if not cache:
        raise ValueError("backward requires the cache from forward(want_cache=True)")
    grads = {}
    g = layers.conv3d_backward(cache["out.x"], params["out.w"], g_logits)
    grads["out.w"], grads["out.b"] = g[1], g[2]
    g = g[0]
    skip_grads = [None] * (cfg.levels - 1)
    for l in range(cfg.levels - 1):
        g = _block_backward(params, f"dec{l}.conv1", f"dec{l}.bn1", g, cache, grads)
        g = _block_backward(params, f"dec{l}.conv0", f"dec{l}.bn0", g, cache, grads)
        w = cfg.width(l)
        skip_grads[l] = g[:, :w]
        gx, gw, gb = layers.upconv2_backward(cache[f"dec{l}.up.x"],
                                             params[f"dec{l}.up.w"], g[:, w:])
        grads[f"dec{l}.up.w"] = gw
        grads[f"dec{l}.up.b"] = gb
        g = gx
    for l in reversed(range(cfg.levels)):
        g = _block_backward(params, f"enc{l}.conv1", f"enc{l}.bn1", g, cache, grads)
        g = _block_backward(params, f"enc{l}.conv0", f"enc{l}.bn0", g, cache, grads)
        if l > 0:
            g = layers.maxpool2_backward(cache[f"pool{l}"], g)
            g = g + skip_grads[l - 1]
    return grads


def softmax_channels(logits):
    """Stable softmax over the channel axis (axis 1 of (B,C,...) or axis 0)."""
    axis = 1 if logits.ndim == 5 else 0
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)
