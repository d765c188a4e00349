"""Soft Dice losses and their gradients at the logits.

The multi-class loss is the weight-normalized soft Dice:

    loss = 1 - (1/sum(w)) * sum_a w_a * (2*I_a + eps) / (U_a + eps)

with I_a = sum_v p_{a,v} * t_{a,v} and U_a = sum_v p_{a,v} + sum_v t_{a,v}.
Arrays are channel-first: (C, *spatial). The eps term in numerator and
denominator makes an all-absent class score a perfect 1 (predicting absence
correctly costs nothing).
"""

import numpy as np

DEFAULT_EPS = 1e-5


def onehot(labels, num_classes):
    """Indicator tensor (C, *labels.shape) with exactly one 1 per voxel."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise ValueError(f"labels out of range for {num_classes} classes")
    out = np.zeros((num_classes,) + labels.shape, dtype=np.float32)
    idx = np.indices(labels.shape)
    out[(labels.astype(np.int64),) + tuple(idx)] = 1.0
    return out


def _check(probs, target, weights):
    probs = np.asarray(probs)
    target = np.asarray(target)
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs target {target.shape}")
    if not (np.isfinite(probs).all() and np.isfinite(target).all()):
        raise ValueError("nonfinite inputs")
    c = probs.shape[0]
    if weights is None:
        weights = np.ones(c)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,) or (weights < 0).any() or not weights.any():
        raise ValueError("weights must be C nonnegative reals, not all zero")
    return probs, target, weights


def _dice_terms(probs, target, eps):
    axes = tuple(range(1, probs.ndim))
    inter = (probs * target).sum(axis=axes)
    union = probs.sum(axis=axes) + target.sum(axis=axes)
    return (2.0 * inter + eps) / (union + eps), union, inter


def msdl(probs, target_onehot, weights=None, eps=DEFAULT_EPS):
    """Class-weighted soft Dice loss over all classes (background included)."""
    probs, target, weights = _check(probs, target_onehot, weights)
    dice, _, _ = _dice_terms(probs, target, eps)
    return float(1.0 - (weights * dice).sum() / weights.sum())


def msdl_grad(probs, target_onehot, weights=None, eps=DEFAULT_EPS):
    """Gradient of msdl wrt the pre-softmax logits (chained through softmax)."""
    probs, target, weights = _check(probs, target_onehot, weights)
    _, union, inter = _dice_terms(probs, target, eps)
    shape = (-1,) + (1,) * (probs.ndim - 1)
    wn = (weights / weights.sum()).reshape(shape)
    num = (2.0 * inter + eps).reshape(shape)
    den = (union + eps).reshape(shape)
    # d(loss)/d(probs): quotient rule on each class's dice term
    gp = -wn * (2.0 * target * den - num) / (den * den)
    dot = (gp * probs).sum(axis=0, keepdims=True)
    return (probs * (gp - dot)).astype(probs.dtype, copy=False)


def binary_dice_loss(probs, target_binary, eps=DEFAULT_EPS):
    """Foreground-channel Dice loss for a 2-channel binary problem."""
    return msdl(probs, _binary_onehot(probs, target_binary), [0.0, 1.0], eps)


def binary_dice_grad(probs, target_binary, eps=DEFAULT_EPS):
    return msdl_grad(probs, _binary_onehot(probs, target_binary), [0.0, 1.0], eps)


def _binary_onehot(probs, target_binary):
    if probs.shape[0] != 2:
        raise ValueError(f"binary loss expects 2 channels, got {probs.shape[0]}")
    return onehot(np.asarray(target_binary), 2)


def inverse_volume_weights(target_onehot, floor=1.0):
    """Class weights proportional to 1 / (voxel count + floor)."""
    axes = tuple(range(1, np.asarray(target_onehot).ndim))
    counts = np.asarray(target_onehot).sum(axis=axes)
    return 1.0 / (counts + floor)
