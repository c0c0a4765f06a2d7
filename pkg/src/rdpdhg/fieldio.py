"""Binary field snapshots (RDF1) and 8-bit PGM previews."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RDF1"
_HEADER = struct.Struct("<4sIId")


def write_field(path, values: np.ndarray, time: float = 0.0) -> None:
    """Write one square field: magic, u32 n_x, u32 n_x, f64 time, then row-major f64 values."""
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"expected a square 2-D field, got shape {values.shape}")
    n = values.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, n, float(time)))
        fh.write(np.ascontiguousarray(values).tobytes(order="C"))


def read_field(path) -> tuple[np.ndarray, float]:
    """Read an RDF1 snapshot; returns ``(values, time)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n0, n1, time = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * n0 * n1
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n0, n1)
    return values.astype(float), float(time)


def write_pgm(path, values: np.ndarray) -> None:
    """Binary PGM with the linear map [-1, 1] -> [0, 255] (values clipped)."""
    values = np.asarray(values, dtype=float)
    pix = np.clip(np.rint((values + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
