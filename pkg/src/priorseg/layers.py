"""3D layer primitives (forward + backward) on (B, C, D, H, W) arrays.

Convolutions are same-padded cross-correlations evaluated as slab-wise
im2col matmuls so peak memory stays bounded on full-size volumes. All
backward passes are exact analytic gradients; max-pool splits gradient
equally among tied maxima so it matches central finite differences.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_SLAB_BYTES = 64 << 20


def _slab_rows(ci, ksize, itemsize, h, w):
    per_row = ci * ksize * itemsize * h * w
    return max(1, _SLAB_BYTES // per_row)


def conv3d_forward(x, w, b):
    """Same-padded 3D cross-correlation. w: (Co, Ci, kd, kh, kw), odd kernels."""
    B, Ci, D, H, W = x.shape
    Co = w.shape[0]
    kd, kh, kw = w.shape[2:]
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    wm = w.reshape(Co, -1).T  # (Ci*k^3, Co)
    out = np.empty((B, Co, D, H, W), dtype=x.dtype)
    step = _slab_rows(Ci, kd * kh * kw, x.itemsize, H, W)
    for bi in range(B):
        for d0 in range(0, D, step):
            d1 = min(D, d0 + step)
            slab = xp[bi, :, d0:d1 + kd - 1]
            win = sliding_window_view(slab, (kd, kh, kw), axis=(1, 2, 3))
            cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(-1, wm.shape[0])
            out[bi, :, d0:d1] = (cols @ wm).T.reshape(Co, d1 - d0, H, W)
    return out + b.reshape(1, Co, 1, 1, 1)


def conv3d_backward(x, w, g):
    """Gradients of conv3d_forward wrt (x, w, b) given upstream g."""
    B, Ci, D, H, W = x.shape
    Co = w.shape[0]
    kd, kh, kw = w.shape[2:]
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    # input gradient: same-padded correlation with the flipped, transposed kernel
    w_flip = np.ascontiguousarray(np.flip(w, axis=(2, 3, 4)).swapaxes(0, 1))
    gx = conv3d_forward(g, w_flip, np.zeros(Ci, dtype=g.dtype))
    gb = g.sum(axis=(0, 2, 3, 4))
    gw_m = np.zeros((Ci * kd * kh * kw, Co), dtype=np.result_type(x, g))
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    step = _slab_rows(Ci, kd * kh * kw, x.itemsize, H, W)
    for bi in range(B):
        for d0 in range(0, D, step):
            d1 = min(D, d0 + step)
            slab = xp[bi, :, d0:d1 + kd - 1]
            win = sliding_window_view(slab, (kd, kh, kw), axis=(1, 2, 3))
            cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(-1, gw_m.shape[0])
            gslab = g[bi, :, d0:d1].reshape(Co, -1).T
            gw_m += cols.T @ gslab
    gw = gw_m.T.reshape(Co, Ci, kd, kh, kw).astype(w.dtype, copy=False)
    return gx, gw, gb


def upconv2_forward(x, w, b):
    """Transposed conv, kernel 2^3, stride 2. w: (Ci, Co, 2, 2, 2)."""
    B, Ci, D, H, W = x.shape
    Co = w.shape[1]
    t = np.einsum("bcdhw,coijk->bodihjwk", x, w, optimize=True)
    out = t.reshape(B, Co, 2 * D, 2 * H, 2 * W)
    return out + b.reshape(1, Co, 1, 1, 1)


def upconv2_backward(x, w, g):
    B, Ci, D, H, W = x.shape
    Co = w.shape[1]
    gr = g.reshape(B, Co, D, 2, H, 2, W, 2)
    gx = np.einsum("bodihjwk,coijk->bcdhw", gr, w, optimize=True)
    gw = np.einsum("bcdhw,bodihjwk->coijk", x, gr, optimize=True)
    gb = g.sum(axis=(0, 2, 3, 4))
    return gx, gw.astype(w.dtype, copy=False), gb


def maxpool2_forward(x):
    B, C, D, H, W = x.shape
    if D % 2 or H % 2 or W % 2:
        raise ValueError(f"max-pool needs even spatial dims, got {(D, H, W)}")
    xr = x.reshape(B, C, D // 2, 2, H // 2, 2, W // 2, 2)
    out = xr.max(axis=(3, 5, 7))
    return out, (xr, out)


def maxpool2_backward(cache, g):
    xr, out = cache
    mask = xr == out[:, :, :, None, :, None, :, None]
    counts = mask.sum(axis=(3, 5, 7), keepdims=True)
    gx = mask * (g[:, :, :, None, :, None, :, None] / counts)
    return gx.reshape(g.shape[0], g.shape[1], 2 * g.shape[2], 2 * g.shape[3],
                      2 * g.shape[4])


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(cache, g):
    return g * cache


BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def bn_forward(x, gamma, beta, running_mean, running_var, train):
    """Per-channel batch norm over (B, D, H, W).

    In train mode the running statistics arrays are updated in place
    (momentum 0.9); eval mode reads them and mutates nothing.
    """
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= BN_MOMENTUM
        running_mean += (1 - BN_MOMENTUM) * mu
        running_var *= BN_MOMENTUM
        running_var += (1 - BN_MOMENTUM) * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, train)


def bn_backward(cache, g):
    xhat, inv_std, gamma, train = cache
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    ggamma = (g * xhat).sum(axis=axes)
    gbeta = g.sum(axis=axes)
    gxhat = g * gamma.reshape(shape)
    if train:
        n = g.shape[0] * g.shape[2] * g.shape[3] * g.shape[4]
        gx = (gxhat
              - gxhat.sum(axis=axes, keepdims=True) / n
              - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True) / n
              ) * inv_std.reshape(shape)
    else:
        gx = gxhat * inv_std.reshape(shape)
    return gx, ggamma, gbeta
