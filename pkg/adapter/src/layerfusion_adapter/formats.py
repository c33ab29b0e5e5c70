"""ATND tensor writing and manifest emission, per the published byte layout.

Deliberately self-contained: the analyzer side owns the reference
implementation, this side re-implements the normative format so the files
are the only coupling between the two packages.

ATND: magic "ATND", u32 LE format version (1), u8 dtype code (1 = float32),
u8 ndim, ndim x u32 LE dims, row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ATND"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1
MANIFEST_VERSION = 1


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    if not np.isfinite(array).all():
        raise ValueError("refusing to write non-finite tensor")
    header = MAGIC + struct.pack("<IBB", FORMAT_VERSION, DTYPE_FLOAT32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.astype("<f4").tobytes(order="C"))


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
