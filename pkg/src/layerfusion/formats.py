"""Bit-exact file formats: ATND tensor dumps and binary netpbm images.

ATND layout (all little-endian):

    bytes 0..3   magic "ATND"
    bytes 4..7   format version, u32 (currently 1)
    byte  8      dtype code, u8 (1 = float32)
    byte  9      ndim, u8
    then         ndim x u32 dims
    then         row-major float32 payload, 4 * prod(dims) bytes

Images are written as binary netpbm: P5 (gray), P6 (rgb), P7 (rgba with
TUPLTYPE RGB_ALPHA). Float values in [0, 1] quantize to 8 bits with
round-half-up, q = floor(v * 255 + 0.5); readers map back as q / 255.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError

MAGIC = b"ATND"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1

PathLike = Union[str, Path]


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    if not np.isfinite(array).all():
        raise ValueError("refusing to write non-finite tensor")
    if array.ndim > 255:
        raise ValueError("too many dims")
    if any(d >= 2**32 for d in array.shape):
        raise ValueError("dim too large for u32")
    header = MAGIC + struct.pack("<IBB", FORMAT_VERSION, DTYPE_FLOAT32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.astype("<f4").tobytes(order="C"))


def read_tensor(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 10:
        raise FormatError(f"{path}: truncated header, {len(blob)} bytes < 10 (offset 0)")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} (offset 0)")
    version, dtype, ndim = struct.unpack("<IBB", blob[4:10])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (offset 4)")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype} (offset 8)")
    dims_end = 10 + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dims, expected {dims_end} bytes (offset 10)")
    dims = struct.unpack(f"<{ndim}I", blob[10:dims_end])
    expected = int(np.prod(dims, dtype=np.int64)) * 4 if ndim else 4
    payload = blob[dims_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} != expected {expected} (offset {dims_end})"
        )
    array = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if not np.isfinite(array).all():
        raise FormatError(f"{path}: non-finite payload values (offset {dims_end})")
    return array.copy()


def _quantize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if not np.isfinite(values).all():
        raise ValueError("image values must be finite")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError(
            f"image values outside [0, 1]: min {values.min():.4g}, max {values.max():.4g}"
        )
    return np.floor(values.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path: PathLike, gray: np.ndarray) -> None:
    if gray.ndim != 2:
        raise ValueError(f"PGM needs (H, W), got {gray.shape}")
    q = _quantize(gray)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes(order="C"))


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got {rgb.shape}")
    q = _quantize(rgb)
    h, w = q.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes(order="C"))


def write_pam(path: PathLike, rgba: np.ndarray) -> None:
    if rgba.ndim != 3 or rgba.shape[2] != 4:
        raise ValueError(f"PAM needs (H, W, 4), got {rgba.shape}")
    q = _quantize(rgba)
    h, w = q.shape[:2]
    header = (
        f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH 4\nMAXVAL 255\n"
        "TUPLTYPE RGB_ALPHA\nENDHDR\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(q.tobytes(order="C"))


def write_image(path: PathLike, image: np.ndarray, fmt: str) -> None:
    """Dispatch on format name: PGM (gray), PPM (rgb), PAM (rgba)."""
    writers = {"PGM": write_pgm, "PPM": write_ppm, "PAM": write_pam}
    if fmt.upper() not in writers:
        raise ValueError(f"unknown image format {fmt!r}; expected PGM, PPM or PAM")
    writers[fmt.upper()](path, image)


def _read_netpbm_tokens(blob: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read whitespace-separated integer tokens, skipping # comments."""
    tokens: list[int] = []
    i = start
    while len(tokens) < count:
        if i >= len(blob):
            raise FormatError(f"header ended early (offset {i})")
        ch = blob[i : i + 1]
        if ch == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace():
                j += 1
            tok = blob[i:j]
            if not tok.isdigit():
                raise FormatError(f"bad header token {tok!r} (offset {i})")
            tokens.append(int(tok))
            i = j
    return tokens, i


def _read_p5_p6(path: PathLike, magic: bytes, channels: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != magic:
        raise FormatError(f"{path}: bad magic {blob[:2]!r} (offset 0)")
    (w, h, maxval), i = _read_netpbm_tokens(blob, 3, 2)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    i += 1  # single whitespace byte after maxval
    expected = w * h * channels
    payload = blob[i : i + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload {len(payload)} != expected {expected} (offset {i})")
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    return data.reshape((h, w) if channels == 1 else (h, w, channels))


def read_pgm(path: PathLike) -> np.ndarray:
    return _read_p5_p6(path, b"P5", 1)


def read_ppm(path: PathLike) -> np.ndarray:
    return _read_p5_p6(path, b"P6", 3)


def read_pam(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P7\n"):
        raise FormatError(f"{path}: bad magic (offset 0)")
    end = blob.find(b"ENDHDR\n")
    if end < 0:
        raise FormatError(f"{path}: missing ENDHDR")
    fields: dict[str, str] = {}
    for line in blob[3:end].decode("ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    try:
        w, h = int(fields["WIDTH"]), int(fields["HEIGHT"])
        depth, maxval = int(fields["DEPTH"]), int(fields["MAXVAL"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing PAM header field {exc}") from exc
    if depth != 4 or maxval != 255 or fields.get("TUPLTYPE") != "RGB_ALPHA":
        raise FormatError(f"{path}: expected DEPTH 4 MAXVAL 255 RGB_ALPHA, got {fields}")
    start = end + len(b"ENDHDR\n")
    expected = w * h * 4
    payload = blob[start : start + expected]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload {len(payload)} != expected {expected} (offset {start})"
        )
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    return data.reshape(h, w, 4)
