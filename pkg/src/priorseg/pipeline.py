"""Two-stage pipeline orchestration: folds, training loops, inference, evaluation."""

import copy
import logging
from dataclasses import dataclass

import numpy as np

from . import losses, metrics
from .fusion import FusionAccumulator, accumulate, majority_vote
from .optim import AdamState, adam_step
from .patches import PatchSpec, extract_patch, sample_origins
from .priors import extract_all_priors
from .rng import derive_rng
from .unet import UNetConfig, backward, forward, init_params, softmax_channels
from .volume import (NUM_ORGANS, LabelVolume, normalize_intensity, pad_crop,
                     resample, restore_native)

log = logging.getLogger(__name__)

NUM_FOLDS = 4
NUM_CLASSES = NUM_ORGANS + 1


class DivergenceError(RuntimeError):
    """Training hit a nonfinite loss."""


def _epoch_lr(base_lr, schedule, epoch, total_epochs):
    """Learning rate for one epoch; cosine anneals from base_lr toward 0."""
    if schedule == "cosine":
        return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max(total_epochs, 1)))
    return base_lr


@dataclass
class FoldSplit:
    fold: int
    train_ids: list
    val_ids: list


def make_folds(case_ids, seed):
    """Shuffle once, partition into 4 validation blocks; rest trains."""
    case_ids = list(case_ids)
    if len(case_ids) < NUM_FOLDS:
        raise ValueError(f"need at least {NUM_FOLDS} cases, got {len(case_ids)}")
    order = list(derive_rng(seed, 0xF01D).permutation(len(case_ids)))
    shuffled = [case_ids[i] for i in order]
    blocks = np.array_split(shuffled, NUM_FOLDS)
    folds = []
    for f, block in enumerate(blocks):
        val = list(block)
        train = [c for c in shuffled if c not in set(val)]
        folds.append(FoldSplit(f, train, val))
    return folds


@dataclass
class PreprocessedCase:
    case_id: str
    native_image: object  # normalized ImageVolume, native grid
    native_label: object  # LabelVolume or None
    coarse_image: object  # ImageVolume on the coarse grid (padded/cropped)
    coarse_label: object  # LabelVolume on the coarse grid, or None
    record: object  # CropPadRecord for restoring native geometry


def preprocess_case(case_id, image, label, cfg):
    """Normalize, resample to the coarse grid, pad/crop to constant dims."""
    native = normalize_intensity(image, *cfg.window)
    coarse_img = resample(native, cfg.coarse.target_spacing, "trilinear")
    coarse_img, record = pad_crop(coarse_img, cfg.coarse.target_dims,
                                  fill=float(coarse_img.voxels.min()))
    coarse_lab = None
    if label is not None:
        lab = resample(label, cfg.coarse.target_spacing, "nearest")
        coarse_lab, _ = pad_crop(lab, cfg.coarse.target_dims, fill=0)
    return PreprocessedCase(case_id, native, label, coarse_img, coarse_lab, record)


def _flip_augment(xs, ys, rng):
    """Random axis flips (p=1/2 each) plus an xy transpose when square."""
    out_x, out_y = [], []
    for x, y in zip(xs, ys):
        axes = tuple(int(a) for a in range(3) if rng.random() < 0.5)
        if axes:
            x = np.flip(x, axes)
            y = np.flip(y, axes)
        if x.shape[0] == x.shape[1] and rng.random() < 0.5:
            x = np.swapaxes(x, 0, 1)
            y = np.swapaxes(y, 0, 1)
        out_x.append(np.ascontiguousarray(x))
        out_y.append(np.ascontiguousarray(y))
    return out_x, out_y


def _coarse_batch_loss_grad(params, ucfg, xs, ys, train, weighting="uniform"):
    """Mean loss over a batch; gradients at the logits when training."""
    x = np.stack(xs)[:, None]
    if train:
        logits, cache = forward(params, ucfg, x, train=True, want_cache=True)
    else:
        logits = forward(params, ucfg, x, train=False)
        cache = None
    probs = softmax_channels(logits)
    loss = 0.0
    g = np.zeros_like(logits) if train else None
    for b, y in enumerate(ys):
        target = losses.onehot(y, NUM_CLASSES)
        w = None
        if weighting == "inverse_volume":
            w = losses.inverse_volume_weights(target)
        loss += losses.msdl(probs[b], target, w)
        if train:
            g[b] = losses.msdl_grad(probs[b], target, w) / len(ys)
    return loss / len(ys), g, cache


def train_coarse(cfg, train_cases, val_cases, seed):
    """Train the multi-organ coarse model; keeps the best-validation params."""
    ucfg = UNetConfig(1, NUM_CLASSES, cfg.coarse.levels, cfg.coarse.base_width)
    params = init_params(ucfg, derive_rng(seed, 1))
    state = AdamState(lr=cfg.coarse.lr)
    if not train_cases:
        raise ValueError("empty training set")
    history = []
    best = (np.inf, -1, copy.deepcopy(params))
    batch = max(1, cfg.coarse.batch)
    for epoch in range(cfg.coarse.epochs):
        state.lr = _epoch_lr(cfg.coarse.lr, cfg.coarse.lr_schedule, epoch,
                             cfg.coarse.epochs)
        epoch_rng = derive_rng(seed, 2, epoch)
        order = epoch_rng.permutation(len(train_cases))
        epoch_loss = 0.0
        n_batches = 0
        for i0 in range(0, len(order), batch):
            group = [train_cases[i] for i in order[i0:i0 + batch]]
            xs = [c.coarse_image.voxels for c in group]
            ys = [c.coarse_label.voxels for c in group]
            if cfg.coarse.augment:
                xs, ys = _flip_augment(xs, ys, epoch_rng)
            loss, g, cache = _coarse_batch_loss_grad(
                params, ucfg, xs, ys, train=True,
                weighting=cfg.coarse.class_weighting)
            if not np.isfinite(loss):
                raise DivergenceError(f"coarse epoch {epoch}: nonfinite loss")
            grads = backward(params, ucfg, cache, g)
            adam_step(params, grads, state)
            epoch_loss += loss
            n_batches += 1
        val_loss = coarse_validation_loss(params, ucfg, val_cases)
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_batches,
                        "val_loss": val_loss})
        log.info("coarse epoch %d train %.4f val %.4f", epoch,
                 epoch_loss / n_batches, val_loss)
        if val_loss < best[0]:
            best = (val_loss, epoch, copy.deepcopy(params))
    return ucfg, best[2], history, best[1]


def coarse_validation_loss(params, ucfg, val_cases):
    if not val_cases:
        return float("nan")
    total = 0.0
    for c in val_cases:
        loss, _, _ = _coarse_batch_loss_grad(
            params, ucfg, [c.coarse_image.voxels], [c.coarse_label.voxels],
            train=False)
        total += loss
    return total / len(val_cases)


def coarse_predict(params, ucfg, pre):
    """Coarse forward, argmax, and restoration to the native grid."""
    logits = forward(params, ucfg, pre.coarse_image.voxels[None, None], train=False)
    pred = np.argmax(logits[0], axis=0).astype(np.uint8)
    coarse = LabelVolume(pred, pre.coarse_image.spacing)
    return restore_native(coarse, pre.record, pre.native_image.spacing,
                          pre.native_image.dims)


def _refine_batch_loss_grad(params, ucfg, channel_blocks, label_blocks, train):
    x = np.stack(channel_blocks)
    if train:
        logits, cache = forward(params, ucfg, x, train=True, want_cache=True)
    else:
        logits = forward(params, ucfg, x, train=False)
        cache = None
    probs = softmax_channels(logits)
    loss = 0.0
    g = np.zeros_like(logits) if train else None
    for b, y in enumerate(label_blocks):
        loss += losses.binary_dice_loss(probs[b], y)
        if train:
            g[b] = losses.binary_dice_grad(probs[b], y) / len(label_blocks)
    return loss / len(label_blocks), g, cache


def train_refine(cfg, train_patches, val_patches, seed):
    """Train the single binary refine model on all organs' patches jointly.

    train_patches / val_patches: lists of (channels (2,*dims), binary label).
    """
    ucfg = UNetConfig(2, 2, cfg.refine.levels, cfg.refine.base_width)
    params = init_params(ucfg, derive_rng(seed, 3))
    state = AdamState(lr=cfg.refine.lr)
    if cfg.refine.epochs > 0 and not train_patches:
        raise ValueError("empty patch manifest")
    history = []
    best = (np.inf, -1, copy.deepcopy(params))
    batch = max(1, cfg.refine.batch)
    for epoch in range(cfg.refine.epochs):
        state.lr = _epoch_lr(cfg.refine.lr, cfg.refine.lr_schedule, epoch,
                             cfg.refine.epochs)
        order = derive_rng(seed, 4, epoch).permutation(len(train_patches))
        epoch_loss = 0.0
        n_batches = 0
        for i0 in range(0, len(order), batch):
            group = [train_patches[i] for i in order[i0:i0 + batch]]
            loss, g, cache = _refine_batch_loss_grad(
                params, ucfg, [p[0] for p in group], [p[1] for p in group],
                train=True)
            if not np.isfinite(loss):
                raise DivergenceError(f"refine epoch {epoch}: nonfinite loss")
            grads = backward(params, ucfg, cache, g)
            adam_step(params, grads, state)
            epoch_loss += loss
            n_batches += 1
        val_loss = refine_validation_loss(params, ucfg, val_patches)
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_batches,
                        "val_loss": val_loss})
        log.info("refine epoch %d train %.4f val %.4f", epoch,
                 epoch_loss / n_batches, val_loss)
        if val_loss < best[0]:
            best = (val_loss, epoch, copy.deepcopy(params))
    return ucfg, best[2], history, best[1]


def refine_validation_loss(params, ucfg, val_patches):
    if not val_patches:
        return float("nan")
    total = 0.0
    for channels, label in val_patches:
        loss, _, _ = _refine_batch_loss_grad(params, ucfg, [channels], [label],
                                             train=False)
        total += loss
    return total / len(val_patches)


def infer(coarse_params, coarse_ucfg, refine_params, refine_ucfg, image, cfg,
          seed):
    """Full two-stage inference on one raw image; returns (coarse, fused)."""
    pre = preprocess_case("", image, None, cfg)
    coarse_native = coarse_predict(coarse_params, coarse_ucfg, pre)
    priors = extract_all_priors(coarse_native)
    spec = PatchSpec(cfg.refine.patch_dims, cfg.refine.patches_per_organ,
                     fill_value=0.0)
    acc = FusionAccumulator(image.dims, image.spacing)
    for prior in priors:
        if not prior.present:
            continue
        rng = derive_rng(seed, 5, prior.organ)
        origins = sample_origins(prior, spec, image.dims, rng)
        for origin in origins:
            patch = extract_patch(pre.native_image, prior, None, prior.organ,
                                  origin, spec)
            logits = forward(refine_params, refine_ucfg, patch.channels[None],
                             train=False)
            probs = softmax_channels(logits)
            binary = probs[0, 1] > 0.5
            accumulate(acc, prior.organ, origin, binary)
    return coarse_native, majority_vote(acc)


def evaluate_pairs(pairs):
    """pairs: list of (case_id, pred LabelVolume, gt LabelVolume)."""
    cohort = [metrics.evaluate_case(pred, gt, case_id)
              for case_id, pred, gt in pairs]
    return metrics.aggregate(cohort), cohort
