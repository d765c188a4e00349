"""Majority-vote fusion of per-organ binary patch predictions.

Within an organ a voxel is a candidate when more than half of the covering
patches vote positive; across organs the candidate with the highest vote
fraction wins, ties broken by higher positive count, then lower organ id.
Fraction comparisons use integer cross-multiplication, so the result is
exact and independent of accumulation order.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .patches import _window_slices
from .volume import NUM_ORGANS, LabelVolume, Spacing


@dataclass
class FusionAccumulator:
    dims: tuple
    spacing: Spacing
    positive: dict = field(default_factory=dict)  # organ -> int32 grid
    coverage: dict = field(default_factory=dict)


def accumulate(acc, organ, origin, binary_pred):
    """Add one patch's votes; out-of-volume parts of the footprint are ignored."""
    if not 1 <= organ <= NUM_ORGANS:
        raise ValueError(f"invalid organ id {organ}")
    binary_pred = np.asarray(binary_pred)
    got = _window_slices(origin, binary_pred.shape, acc.dims)
    if got is None:
        raise ValueError(f"patch at {origin} lies fully outside the volume")
    src, dst = got
    if organ not in acc.positive:
        acc.positive[organ] = np.zeros(acc.dims, dtype=np.int32)
        acc.coverage[organ] = np.zeros(acc.dims, dtype=np.int32)
    acc.coverage[organ][src] += 1
    acc.positive[organ][src] += (binary_pred[dst] != 0).astype(np.int32)
    return acc


def majority_vote(acc):
    """Resolve the accumulator into a single multi-organ LabelVolume."""
    best_label = np.zeros(acc.dims, dtype=np.uint8)
    best_pos = np.zeros(acc.dims, dtype=np.int64)
    best_cov = np.ones(acc.dims, dtype=np.int64)
    for organ in sorted(acc.positive):
        pos = acc.positive[organ].astype(np.int64)
        cov = acc.coverage[organ].astype(np.int64)
        cand = (cov > 0) & (2 * pos > cov)
        lhs = pos * best_cov
        rhs = best_pos * cov
        better = cand & ((lhs > rhs) | ((lhs == rhs) & (pos > best_pos)))
        best_label[better] = organ
        best_pos[better] = pos[better]
        best_cov[better] = cov[better]
    return LabelVolume(best_label, acc.spacing)


def fuse_brute_force(patch_votes, dims, spacing=(1.0, 1.0, 1.0)):
    """Test oracle: re-derive the fused labels voxel by voxel.

    patch_votes: iterable of (organ, origin, binary_pred). Every voxel loops
    over every patch, counts votes per organ with plain Python integers, and
    applies the selection rule with exact Fractions.
    """
    patches = [(organ, tuple(origin), np.asarray(pred)) for organ, origin, pred
               in patch_votes]
    out = np.zeros(dims, dtype=np.uint8)
    for x in range(dims[0]):
        for y in range(dims[1]):
            for z in range(dims[2]):
                pos = {}
                cov = {}
                for organ, origin, pred in patches:
                    px, py, pz = x - origin[0], y - origin[1], z - origin[2]
                    if (0 <= px < pred.shape[0] and 0 <= py < pred.shape[1]
                            and 0 <= pz < pred.shape[2]):
                        cov[organ] = cov.get(organ, 0) + 1
                        if pred[px, py, pz]:
                            pos[organ] = pos.get(organ, 0) + 1
                best = None  # (fraction, positives, -organ)
                label = 0
                for organ in sorted(cov):
                    p, c = pos.get(organ, 0), cov[organ]
                    if 2 * p <= c:
                        continue
                    key = (Fraction(p, c), p, -organ)
                    if best is None or key > best:
                        best = key
                        label = organ
                out[x, y, z] = label
    return LabelVolume(out, spacing)
