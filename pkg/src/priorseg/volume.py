"""3D volumes with physical spacing: resampling, pad/crop, intensity windows.

Grids are axis-aligned; voxel arrays are indexed (x, y, z) and the physical
center of voxel i along an axis with spacing s is (i + 0.5) * s millimeters.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

NUM_ORGANS = 13

ORGAN_NAMES = {
    1: "spleen",
    2: "right kidney",
    3: "left kidney",
    4: "gall bladder",
    5: "esophagus",
    6: "liver",
    7: "stomach",
    8: "aorta",
    9: "inferior vena cava",
    10: "portal splenic vein",
    11: "pancreas",
    12: "right adrenal gland",
    13: "left adrenal gland",
}


class Spacing(NamedTuple):
    """Millimeters per voxel along x, y, z."""

    sx: float
    sy: float
    sz: float

    def validate(self):
        if not all(s > 0 for s in self):
            raise ValueError(f"spacing components must be positive, got {tuple(self)}")


@dataclass
class ImageVolume:
    """Real-valued intensity grid (HU before normalization, [0,1] after)."""

    voxels: np.ndarray  # (W, H, S) float32
    spacing: Spacing

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"expected a 3D voxel grid, got {self.voxels.ndim}D")
        self.spacing = Spacing(*self.spacing)
        self.spacing.validate()

    @property
    def dims(self):
        return self.voxels.shape


@dataclass
class LabelVolume:
    """Integer organ labels in {0..13}, 0 = background."""

    voxels: np.ndarray  # (W, H, S) uint8
    spacing: Spacing

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3:
            raise ValueError(f"expected a 3D voxel grid, got {vox.ndim}D")
        if vox.min(initial=0) < 0 or vox.max(initial=0) > NUM_ORGANS:
            raise ValueError(f"label values must lie in 0..{NUM_ORGANS}")
        self.voxels = vox.astype(np.uint8)
        self.spacing = Spacing(*self.spacing)
        self.spacing.validate()

    @property
    def dims(self):
        return self.voxels.shape


@dataclass
class CropPadRecord:
    """Per-axis crop/pad bookkeeping so a pad_crop can be inverted exactly."""

    crop_lo: tuple
    crop_hi: tuple
    pad_lo: tuple
    pad_hi: tuple
    source_dims: tuple
    target_dims: tuple

    def __post_init__(self):
        for ax in range(3):
            got = (self.source_dims[ax] - self.crop_lo[ax] - self.crop_hi[ax]
                   + self.pad_lo[ax] + self.pad_hi[ax])
            if got != self.target_dims[ax]:
                raise ValueError(f"inconsistent crop/pad record on axis {ax}")
            if (self.crop_lo[ax] and self.pad_lo[ax]) or (self.crop_hi[ax] and self.pad_hi[ax]):
                raise ValueError(f"axis {ax} both crops and pads on the same side")


def _resample_coords(out_dims, out_spacing, in_dims, in_spacing):
    # voxel centers of the output grid mapped into input index space, clamped
    axes = []
    for n_out, s_out, n_in, s_in in zip(out_dims, out_spacing, in_dims, in_spacing):
        c = (np.arange(n_out) + 0.5) * (s_out / s_in) - 0.5
        axes.append(np.clip(c, 0.0, n_in - 1))
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def resample(vol, target_spacing, mode):
    """Resample onto a grid with the given spacing (ceil-sized, border-clamped)."""
    target_spacing = Spacing(*target_spacing)
    target_spacing.validate()
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if isinstance(vol, LabelVolume) and mode != "nearest":
        raise ValueError("label volumes must be resampled with nearest-neighbor")
    if isinstance(vol, ImageVolume) and mode != "trilinear":
        raise ValueError("image volumes must be resampled with trilinear")

    out_dims = tuple(
        int(np.ceil(n * s_in / s_out))
        for n, s_in, s_out in zip(vol.dims, vol.spacing, target_spacing)
    )
    coords = _resample_coords(out_dims, target_spacing, vol.dims, vol.spacing)
    order = 1 if mode == "trilinear" else 0
    out = ndimage.map_coordinates(
        vol.voxels.astype(np.float32 if order else vol.voxels.dtype),
        coords, order=order, mode="nearest")
    if isinstance(vol, LabelVolume):
        return LabelVolume(out, target_spacing)
    return ImageVolume(out, target_spacing)


def pad_crop(vol, target_dims, fill):
    """Center-crop/pad to target_dims; excess voxel goes to the high side."""
    target_dims = tuple(int(d) for d in target_dims)
    if any(d < 1 for d in target_dims):
        raise ValueError("target dims must be >= 1")
    crop_lo, crop_hi, pad_lo, pad_hi = [], [], [], []
    for src, tgt in zip(vol.dims, target_dims):
        if src >= tgt:
            excess = src - tgt
            crop_lo.append(excess // 2)
            crop_hi.append(excess - excess // 2)
            pad_lo.append(0)
            pad_hi.append(0)
        else:
            deficit = tgt - src
            crop_lo.append(0)
            crop_hi.append(0)
            pad_lo.append(deficit // 2)
            pad_hi.append(deficit - deficit // 2)
    record = CropPadRecord(tuple(crop_lo), tuple(crop_hi), tuple(pad_lo), tuple(pad_hi),
                           tuple(vol.dims), target_dims)
    sl = tuple(slice(lo, n - hi) for lo, hi, n in zip(crop_lo, crop_hi, vol.dims))
    out = np.pad(vol.voxels[sl], tuple(zip(pad_lo, pad_hi)),
                 constant_values=np.asarray(fill, dtype=vol.voxels.dtype))
    if isinstance(vol, LabelVolume):
        return LabelVolume(out, vol.spacing), record
    return ImageVolume(out, vol.spacing), record


def undo_pad_crop(vol, record, fill=0):
    """Invert a pad_crop: strip padding, re-grow cropped margins with fill."""
    if tuple(vol.dims) != tuple(record.target_dims):
        raise ValueError(f"volume dims {vol.dims} do not match record target "
                         f"{record.target_dims}")
    sl = tuple(slice(lo, n - hi)
               for lo, hi, n in zip(record.pad_lo, record.pad_hi, record.target_dims))
    out = np.pad(vol.voxels[sl], tuple(zip(record.crop_lo, record.crop_hi)),
                 constant_values=np.asarray(fill, dtype=vol.voxels.dtype))
    if isinstance(vol, LabelVolume):
        return LabelVolume(out, vol.spacing)
    return ImageVolume(out, vol.spacing)


def restore_native(labels_coarse, record, native_spacing, native_dims):
    """Undo pad/crop, then nearest-neighbor resample onto the native grid."""
    native_spacing = Spacing(*native_spacing)
    native_spacing.validate()
    on_grid = undo_pad_crop(labels_coarse, record, fill=0)
    coords = _resample_coords(tuple(native_dims), native_spacing,
                              on_grid.dims, on_grid.spacing)
    out = ndimage.map_coordinates(on_grid.voxels, coords, order=0, mode="nearest")
    return LabelVolume(out, native_spacing)


def normalize_intensity(vol, window_lo, window_hi):
    """Clamp to [window_lo, window_hi] HU and map affinely to [0, 1]."""
    if not window_lo < window_hi:
        raise ValueError(f"inverted window ({window_lo}, {window_hi})")
    v = np.clip(vol.voxels, window_lo, window_hi)
    v = (v - window_lo) / (window_hi - window_lo)
    return ImageVolume(v.astype(np.float32), vol.spacing)
