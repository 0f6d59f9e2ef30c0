"""Writer for the FSEQ v1 feature-sequence container.

The format is the interchange contract with the percept toolkit: a 24-byte
little-endian header (magic "FSEQ", u16 version = 1, u8 dtype = 0 meaning
IEEE-754 binary32, one reserved byte, u32 T, u32 D, eight reserved bytes)
followed by T*D binary32 values in frame-major order. This module owns its
own implementation so the extractor stays importable without percept.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSEQ"
VERSION = 1
DTYPE_F32 = 0
HEADER = struct.Struct("<4sHBBII8x")


class FseqWriteError(ValueError):
    """Raised when a frame matrix cannot be written as FSEQ."""


def save_fseq(frames: np.ndarray, path: Path | str) -> None:
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise FseqWriteError(f"frames must be a T x D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FseqWriteError("frames contain non-finite values")
    t, d = arr.shape
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F32, 0, t, d)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_header(path: Path | str) -> tuple[int, int]:
    """Parse (T, D) from an FSEQ header; validation beyond that is the
    consumer's job."""
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise FseqWriteError(f"{path}: truncated header")
    magic, version, dtype, _, t, d = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FseqWriteError(f"{path}: bad magic {magic!r}")
    if version != VERSION or dtype != DTYPE_F32:
        raise FseqWriteError(f"{path}: unsupported version/dtype {version}/{dtype}")
    return t, d
