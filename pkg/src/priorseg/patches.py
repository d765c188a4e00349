"""Prior-guided random patch extraction with a joint-coverage guarantee."""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .rng import derive_rng
from .volume import NUM_ORGANS

log = logging.getLogger(__name__)


class OrganMissingError(ValueError):
    """Requested patch sampling for an organ absent from the coarse prior."""


@dataclass
class PatchSpec:
    dims: tuple = (128, 128, 64)
    patches_per_organ: int = 50
    fill_value: float = 0.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if any(d < 1 for d in self.dims):
            raise ValueError("patch dims must be >= 1")
        if self.patches_per_organ < 1:
            raise ValueError("patches_per_organ must be >= 1")


@dataclass
class PatchSample:
    """Two-channel input block (intensity, prior) with its binary organ label."""

    organ: int
    origin: tuple
    channels: np.ndarray  # (2, *dims) float32
    label: np.ndarray  # (*dims) uint8 in {0, 1}


def _window_slices(origin, patch_dims, volume_dims):
    """Intersect a patch window with the volume; returns (src, dst) slices."""
    src, dst = [], []
    for o, p, n in zip(origin, patch_dims, volume_dims):
        lo = max(o, 0)
        hi = min(o + p, n)
        if lo >= hi:
            return None
        src.append(slice(lo, hi))
        dst.append(slice(lo - o, hi - o))
    return tuple(src), tuple(dst)


def _clear_footprints(uncovered, origins, patch_dims):
    for origin in origins:
        got = _window_slices(origin, patch_dims, uncovered.shape)
        if got is not None:
            uncovered[got[0]] = False


def sample_origins(prior, spec, volume_dims, rng):
    """Random patch origins whose footprints jointly cover the whole prior.

    Origins are uniform over positions whose window intersects the prior
    bbox. Uncovered prior voxels are then repaired by replacing trailing
    random origins with patches centered on the first uncovered voxel in
    scan order; if the budget is exhausted, extra origins are appended.
    """
    if not prior.present:
        raise OrganMissingError(f"organ {prior.organ} missing from coarse prior, skip")
    lo = [b[0] - d + 1 for b, d in zip(prior.bbox, spec.dims)]
    hi = [b[1] for b in prior.bbox]
    n = spec.patches_per_organ
    origins = [tuple(int(rng.integers(l, h + 1)) for l, h in zip(lo, hi))
               for _ in range(n)]

    n_random = n
    while True:
        uncovered = prior.mask.copy()
        _clear_footprints(uncovered, origins, spec.dims)
        flat = np.argmax(uncovered)
        if not uncovered.flat[flat]:
            break
        vox = np.unravel_index(flat, uncovered.shape)
        repair = tuple(int(v) - d // 2 for v, d in zip(vox, spec.dims))
        if n_random > 0:
            n_random -= 1
            origins[n_random] = repair
        else:
            origins.append(repair)
    if len(origins) > n:
        log.warning("organ %d: patch budget grown from %d to %d to cover prior",
                    prior.organ, n, len(origins))
    return origins


def extract_patch(image, prior, gt, organ, origin, spec):
    """Cut the two-channel window at origin; out-of-volume parts are filled.

    gt may be None at inference time, leaving the label block all zero.
    """
    if image.dims != prior.mask.shape or (gt is not None and gt.dims != image.dims):
        raise ValueError("image, prior, and ground truth dims differ")
    channels = np.zeros((2,) + spec.dims, dtype=np.float32)
    channels[0].fill(spec.fill_value)
    label = np.zeros(spec.dims, dtype=np.uint8)
    got = _window_slices(origin, spec.dims, image.dims)
    if got is not None:
        src, dst = got
        channels[0][dst] = image.voxels[src]
        channels[1][dst] = prior.mask[src]
        if gt is not None:
            label[dst] = gt.voxels[src] == organ
    return PatchSample(organ, tuple(int(o) for o in origin), channels, label)


@dataclass
class PatchStore:
    """Raw little-endian float32 blocks with a sidecar JSON index.

    Each record holds channel 0, channel 1, then the label block, all as
    float32 in C order, at the byte offset listed in the index.
    """

    data_path: str
    index_path: str
    dims: tuple
    records: list = field(default_factory=list)

    @property
    def block_bytes(self):
        return 3 * int(np.prod(self.dims)) * 4

    def append(self, sample, fh):
        offset = fh.tell()
        fh.write(sample.channels.astype("<f4").tobytes())
        fh.write(sample.label.astype("<f4").tobytes())
        self.records.append({"organ": sample.organ, "origin": list(sample.origin),
                             "offset": offset})

    def save_index(self):
        with open(self.index_path, "w") as f:
            json.dump({"dims": list(self.dims), "records": self.records}, f)

    @classmethod
    def open(cls, data_path, index_path):
        with open(index_path) as f:
            idx = json.load(f)
        return cls(data_path, index_path, tuple(idx["dims"]), idx["records"])

    def load(self, row):
        rec = self.records[row]
        count = 3 * int(np.prod(self.dims))
        with open(self.data_path, "rb") as f:
            f.seek(rec["offset"])
            flat = np.frombuffer(f.read(count * 4), dtype="<f4")
        blocks = flat.reshape((3,) + self.dims)
        channels = np.ascontiguousarray(blocks[:2], dtype=np.float32)
        label = blocks[2].astype(np.uint8)
        return PatchSample(rec["organ"], tuple(rec["origin"]), channels, label)


def build_refine_dataset(cases, spec, master_seed, out_dir=None, materialize=True):
    """Sample patches for every (case, present organ) pair.

    cases: list of (case_id, image, gt, priors) with priors ordered 1..13.
    Returns (manifest, store); store is None unless materialized to out_dir.
    The manifest has one row per patch plus one skip row per absent organ,
    and is a pure function of (cases, spec, master_seed).
    """
    manifest = []
    store = None
    fh = None
    if materialize:
        if out_dir is None:
            raise ValueError("materialize=True requires out_dir")
        os.makedirs(out_dir, exist_ok=True)
        store = PatchStore(os.path.join(out_dir, "patches.bin"),
                           os.path.join(out_dir, "patches.index.json"), spec.dims)
        fh = open(store.data_path, "wb")
    try:
        for ci, (case_id, image, gt, priors) in enumerate(cases):
            for prior in priors:
                organ = prior.organ
                if not prior.present:
                    manifest.append({"case": case_id, "organ": organ,
                                     "skipped": True})
                    continue
                rng = derive_rng(master_seed, ci, organ)
                origins = sample_origins(prior, spec, image.dims, rng)
                for origin in origins:
                    manifest.append({"case": case_id, "organ": organ,
                                     "origin": list(origin),
                                     "seed": [int(master_seed), ci, organ],
                                     "skipped": False})
                    if materialize:
                        sample = extract_patch(image, prior, gt, organ, origin, spec)
                        store.append(sample, fh)
    finally:
        if fh is not None:
            fh.close()
    if materialize:
        store.save_index()
    if out_dir is not None:
        write_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest, store


def write_manifest(manifest, path):
    with open(path, "w") as f:
        for row in manifest:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def manifest_counts(manifest, patches_per_organ):
    """(expected, actual) patch counts; each absent organ lowers expected."""
    cases = {row["case"] for row in manifest}
    skips = sum(1 for row in manifest if row.get("skipped"))
    actual = sum(1 for row in manifest if not row.get("skipped"))
    expected = (len(cases) * NUM_ORGANS - skips) * patches_per_organ
    return expected, actual
