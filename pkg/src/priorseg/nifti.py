"""Minimal NIfTI-1 single-file reader/writer (axis-aligned grids only).

Honors dim[1..3], pixdim[1..3], datatype, and scl_slope/scl_inter on read.
Writes float32 images / uint8 labels with identity scaling. Files ending in
.gz are gzip-compressed with a fixed mtime so repeated writes are
byte-identical.
"""

import gzip
import struct

import numpy as np

from .volume import NUM_ORGANS, ImageVolume, LabelVolume, Spacing

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

_DTYPES = {
    2: np.dtype("uint8"),
    4: np.dtype("int16"),
    8: np.dtype("int32"),
    16: np.dtype("float32"),
    64: np.dtype("float64"),
    256: np.dtype("int8"),
    512: np.dtype("uint16"),
    768: np.dtype("uint32"),
}

DT_UINT8 = 2
DT_FLOAT32 = 16


class NiftiFormatError(ValueError):
    """Raised for truncated, malformed, or unsupported NIfTI files."""


class _GzipWriter(gzip.GzipFile):
    def __init__(self, path):
        # fileobj + fixed mtime: no filename/timestamp in the gzip header,
        # so identical volumes produce byte-identical files
        self._raw = open(path, "wb")
        super().__init__(filename="", fileobj=self._raw, mode="wb", mtime=0)

    def close(self):
        super().close()
        self._raw.close()


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        if "w" in mode:
            return _GzipWriter(path)
        return gzip.GzipFile(path, mode)
    return open(path, mode)


def _pack_header(dims, spacing, datatype, bitpix):
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = (3,) + tuple(dims) + (1, 1, 1, 1)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    pixdim = (1.0,) + tuple(float(s) for s in spacing) + (0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    hdr[123] = 2  # spatial units: millimeters
    hdr[344:348] = MAGIC
    return bytes(hdr)


def write_volume(vol, path):
    """Write an ImageVolume (float32) or LabelVolume (uint8) as NIfTI-1."""
    if isinstance(vol, LabelVolume):
        data = vol.voxels.astype("<u1")
        datatype, bitpix = DT_UINT8, 8
    else:
        data = vol.voxels.astype("<f4")
        datatype, bitpix = DT_FLOAT32, 32
    hdr = _pack_header(vol.dims, vol.spacing, datatype, bitpix)
    with _open(path, "wb") as f:
        f.write(hdr)
        f.write(b"\x00\x00\x00\x00")  # no header extensions
        # NIfTI stores x fastest; emit axes in (z, y, x) C order
        f.write(np.ascontiguousarray(data.transpose(2, 1, 0)).tobytes())


def read_volume(path, kind):
    """Read a NIfTI-1 file as an ImageVolume (kind='image') or LabelVolume."""
    if kind not in ("image", "label"):
        raise ValueError(f"kind must be 'image' or 'label', got {kind!r}")
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr == HEADER_SIZE:
        endian = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
        endian = ">"
    else:
        raise NiftiFormatError(f"{path}: bad sizeof_hdr, not a NIfTI-1 file")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(d != 1 for d in dim[4:1 + ndim]):
        raise NiftiFormatError(f"{path}: only 3D volumes are supported (dim={dim})")
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise NiftiFormatError(f"{path}: non-positive dims {dims}")
    (datatype,) = struct.unpack_from(endian + "h", raw, 70)
    if datatype not in _DTYPES:
        raise NiftiFormatError(f"{path}: unsupported datatype code {datatype}")
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    spacing = Spacing(*(float(p) for p in pixdim[1:4]))
    if any(s <= 0 for s in spacing):
        raise NiftiFormatError(f"{path}: non-positive pixdim {tuple(spacing)}")
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    slope, inter = struct.unpack_from(endian + "2f", raw, 112)

    dtype = _DTYPES[datatype].newbyteorder(endian)
    count = int(np.prod(dims))
    offset = int(vox_offset)
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise NiftiFormatError(f"{path}: truncated data ({len(raw)} < {need} bytes)")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    voxels = flat.reshape(dims[::-1]).transpose(2, 1, 0)
    if slope not in (0.0, 1.0) or inter != 0.0:
        s = slope if slope != 0.0 else 1.0
        voxels = voxels * s + inter

    if kind == "image":
        return ImageVolume(np.asarray(voxels, dtype=np.float32), spacing)
    vals = np.asarray(voxels)
    if not np.issubdtype(vals.dtype, np.integer):
        if not np.all(vals == np.round(vals)):
            raise NiftiFormatError(f"{path}: non-integer values in a label volume")
        vals = vals.astype(np.int64)
    if vals.min(initial=0) < 0 or vals.max(initial=0) > NUM_ORGANS:
        raise ValueError(f"{path}: label values outside 0..{NUM_ORGANS}")
    return LabelVolume(vals.astype(np.uint8), spacing)
