"""Per-organ anatomical priors extracted from a coarse multi-organ prediction."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import NUM_ORGANS


@dataclass
class OrganPrior:
    """Binary native-grid mask plus tight inclusive bbox for one organ."""

    organ: int
    mask: np.ndarray  # bool, native dims
    bbox: tuple | None  # ((x0, x1), (y0, y1), (z0, z1)) inclusive, None if absent
    present: bool


def _tight_bbox(mask):
    bounds = []
    for ax in range(3):
        proj = mask.any(axis=tuple(a for a in range(3) if a != ax))
        idx = np.flatnonzero(proj)
        bounds.append((int(idx[0]), int(idx[-1])))
    return tuple(bounds)


def extract_prior(coarse_native, organ, keep_largest_component=False):
    """Indicator mask of one organ id in the coarse prediction, with bbox.

    keep_largest_component optionally drops all but the biggest connected
    island (6-connectivity); off by default.
    """
    if not 1 <= organ <= NUM_ORGANS:
        raise ValueError(f"organ id must be 1..{NUM_ORGANS}, got {organ}")
    mask = coarse_native.voxels == organ
    if keep_largest_component and mask.any():
        comps, n = ndimage.label(mask)
        if n > 1:
            sizes = ndimage.sum_labels(mask, comps, index=np.arange(1, n + 1))
            mask = comps == (int(np.argmax(sizes)) + 1)
    if not mask.any():
        return OrganPrior(organ, mask, None, False)
    return OrganPrior(organ, mask, _tight_bbox(mask), True)


def extract_all_priors(coarse_native, keep_largest_component=False):
    """One OrganPrior per organ id, in order 1..13."""
    return [extract_prior(coarse_native, organ, keep_largest_component)
            for organ in range(1, NUM_ORGANS + 1)]
