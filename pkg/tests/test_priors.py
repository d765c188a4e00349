import numpy as np
import pytest

from priorseg.priors import extract_all_priors, extract_prior
from priorseg.volume import LabelVolume


def test_absent_organ():
    vol = LabelVolume(np.zeros((10, 10, 10), np.uint8), (1, 1, 1))
    prior = extract_prior(vol, 4)
    assert not prior.present
    assert prior.bbox is None
    assert not prior.mask.any()


def test_cube_bbox():
    vox = np.zeros((64, 64, 32), np.uint8)
    vox[20:30, 30:40, 8:13] = 1
    prior = extract_prior(LabelVolume(vox, (1, 1, 1)), 1)
    assert prior.present
    assert prior.bbox == ((20, 29), (30, 39), (8, 12))


def test_mask_matches_label_exactly():
    rng = np.random.default_rng(0)
    vox = rng.integers(0, 14, (12, 12, 12)).astype(np.uint8)
    vol = LabelVolume(vox, (1, 1, 1))
    for organ in (1, 5, 13):
        prior = extract_prior(vol, organ)
        np.testing.assert_array_equal(prior.mask, vox == organ)


def test_invalid_organ_id():
    vol = LabelVolume(np.zeros((4, 4, 4), np.uint8), (1, 1, 1))
    with pytest.raises(ValueError):
        extract_prior(vol, 0)
    with pytest.raises(ValueError):
        extract_prior(vol, 14)


def test_all_priors_partition_foreground():
    rng = np.random.default_rng(1)
    vox = rng.integers(0, 14, (15, 9, 11)).astype(np.uint8)
    vol = LabelVolume(vox, (1, 1, 1))
    priors = extract_all_priors(vol)
    assert [p.organ for p in priors] == list(range(1, 14))
    union = np.zeros(vol.dims, dtype=np.int32)
    for p in priors:
        union += p.mask
    assert union.max() <= 1  # pairwise disjoint
    np.testing.assert_array_equal(union > 0, vox != 0)


def test_all_background_gives_13_absent():
    vol = LabelVolume(np.zeros((6, 6, 6), np.uint8), (1, 1, 1))
    priors = extract_all_priors(vol)
    assert len(priors) == 13
    assert not any(p.present for p in priors)


def test_bbox_tightness():
    rng = np.random.default_rng(2)
    vox = (rng.random((20, 18, 16)) < 0.02).astype(np.uint8)
    vox[5, 5, 5] = 1
    prior = extract_prior(LabelVolume(vox, (1, 1, 1)), 1)
    (x0, x1), (y0, y1), (z0, z1) = prior.bbox
    assert prior.mask[x0].any() and prior.mask[x1].any()
    assert prior.mask[:, y0].any() and prior.mask[:, y1].any()
    assert prior.mask[:, :, z0].any() and prior.mask[:, :, z1].any()


def test_largest_component_filter():
    vox = np.zeros((20, 20, 20), np.uint8)
    vox[1:10, 1:10, 1:10] = 2  # big island
    vox[15, 15, 15] = 2  # spurious voxel
    vol = LabelVolume(vox, (1, 1, 1))
    full = extract_prior(vol, 2)
    filtered = extract_prior(vol, 2, keep_largest_component=True)
    assert full.mask.sum() == filtered.mask.sum() + 1
    assert not filtered.mask[15, 15, 15]
