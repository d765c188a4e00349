"""Named-parameter checkpoint archive with a bit-exact round trip.

Layout: magic, little-endian uint64 header length, UTF-8 JSON header
(network config, step count, ordered param names/shapes), then each
parameter as raw little-endian float32 in header order.
"""

import json
import struct

import numpy as np

from .unet import UNetConfig

MAGIC = b"PSEGCKPT1\n"


def save_checkpoint(path, cfg, params, step=0):
    names = sorted(params)
    header = {
        "config": cfg.to_dict(),
        "step": int(step),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        params = {}
        for rec in header["params"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 4), dtype="<f4")
            params[rec["name"]] = data.reshape(shape).astype(np.float32)
    cfg = UNetConfig.from_dict(header["config"])
    return cfg, params, header["step"]
