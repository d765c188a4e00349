import gzip
import hashlib
import struct

import numpy as np
import pytest

from priorseg.nifti import NiftiFormatError, read_volume, write_volume
from priorseg.volume import ImageVolume, LabelVolume


def test_image_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vol = ImageVolume(rng.standard_normal((7, 5, 3)).astype(np.float32),
                      (0.7, 0.9, 2.5))
    path = tmp_path / "img.nii"
    write_volume(vol, path)
    back = read_volume(path, "image")
    assert back.dims == vol.dims
    np.testing.assert_allclose(tuple(back.spacing), tuple(vol.spacing), rtol=1e-6)
    np.testing.assert_array_equal(back.voxels, vol.voxels)


def test_label_round_trip_gz(tmp_path):
    rng = np.random.default_rng(1)
    vol = LabelVolume(rng.integers(0, 14, (6, 4, 5)).astype(np.uint8), (2, 2, 6))
    path = tmp_path / "lab.nii.gz"
    write_volume(vol, path)
    back = read_volume(path, "label")
    np.testing.assert_array_equal(back.voxels, vol.voxels)


def test_label_read_as_image_casts_to_reals(tmp_path):
    vol = LabelVolume(np.arange(8, dtype=np.uint8).reshape(2, 2, 2), (1, 1, 1))
    path = tmp_path / "lab.nii"
    write_volume(vol, path)
    img = read_volume(path, "image")
    np.testing.assert_array_equal(img.voxels, vol.voxels.astype(np.float32))


def test_truncated_file_is_malformed(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(NiftiFormatError):
        read_volume(path, "image")


def test_garbage_header_is_malformed(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(b"not a nifti file" * 40)
    with pytest.raises(NiftiFormatError):
        read_volume(path, "image")


def test_header_bytes_hex_inspection(tmp_path):
    # independent check of the written header fields via struct on raw bytes
    vol = ImageVolume(np.zeros((64, 64, 32), np.float32), (2.0, 2.0, 6.0))
    path = tmp_path / "phantom.nii.gz"
    write_volume(vol, path)
    with gzip.open(path, "rb") as f:
        raw = f.read(348)
    assert struct.unpack_from("<i", raw, 0)[0] == 348
    assert struct.unpack_from("<8h", raw, 40)[:4] == (3, 64, 64, 32)
    assert struct.unpack_from("<h", raw, 70)[0] == 16  # float32
    pixdim = struct.unpack_from("<8f", raw, 76)
    assert pixdim[1:4] == (2.0, 2.0, 6.0)
    assert raw[344:348] == b"n+1\x00"
    back = read_volume(path, "image")
    assert back.dims == (64, 64, 32)
    assert tuple(back.spacing) == (2.0, 2.0, 6.0)


def test_writes_are_byte_identical(tmp_path):
    rng = np.random.default_rng(2)
    vol = ImageVolume(rng.standard_normal((5, 6, 7)).astype(np.float32), (1, 1, 1))
    p1, p2 = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
    write_volume(vol, p1)
    write_volume(vol, p2)
    d1 = hashlib.sha256(p1.read_bytes()).hexdigest()
    d2 = hashlib.sha256(p2.read_bytes()).hexdigest()
    assert d1 == d2


def test_scl_slope_inter_applied_on_read(tmp_path):
    vol = ImageVolume(np.ones((2, 2, 2), np.float32), (1, 1, 1))
    path = tmp_path / "scaled.nii"
    write_volume(vol, path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<2f", raw, 112, 2.5, -1.0)  # scl_slope, scl_inter
    path.write_bytes(bytes(raw))
    back = read_volume(path, "image")
    np.testing.assert_allclose(back.voxels, 1.0 * 2.5 - 1.0)


def test_label_out_of_range_rejected(tmp_path):
    vol = ImageVolume(np.full((2, 2, 2), 99.0, np.float32), (1, 1, 1))
    path = tmp_path / "big.nii"
    write_volume(vol, path)
    with pytest.raises(ValueError):
        read_volume(path, "label")
