"""Interchange file formats shared by every stage.

F32M layout (little-endian)::

    b"F32M" | u8 version=1 | u32 rows | u32 cols | f64 hop_seconds
    | f64 frame_zero_time | rows*cols float32, row-major
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

F32M_MAGIC = b"F32M"
F32M_VERSION = 1
_HEADER = struct.Struct("<4sBIIdd")


class FormatError(ValueError):
    """Raised when an interchange file is malformed."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_f32m(matrix, hop_seconds: float, frame_zero_time: float = 0.0) -> bytes:
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError(f"F32M needs a 2-D matrix, got shape {m.shape}")
    rows, cols = m.shape
    header = _HEADER.pack(F32M_MAGIC, F32M_VERSION, rows, cols,
                          float(hop_seconds), float(frame_zero_time))
    return header + np.ascontiguousarray(m).tobytes()


def decode_f32m(data: bytes) -> tuple[np.ndarray, float, float]:
    if len(data) < _HEADER.size:
        raise FormatError("truncated F32M header")
    magic, version, rows, cols, hop, t0 = _HEADER.unpack_from(data)
    if magic != F32M_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {F32M_MAGIC!r}")
    if version != F32M_VERSION:
        raise FormatError(f"unsupported F32M version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(f"F32M payload is {len(data)} bytes, expected {expected}")
    m = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return m.astype(np.float32), hop, t0


def write_f32m(path, matrix, hop_seconds: float, frame_zero_time: float = 0.0) -> None:
    atomic_write_bytes(path, encode_f32m(matrix, hop_seconds, frame_zero_time))


def read_f32m(path) -> tuple[np.ndarray, float, float]:
    """Read an F32M file.

    Returns:
        ``(matrix, hop_seconds, frame_zero_time)`` with a float32 matrix.
    """
    return decode_f32m(Path(path).read_bytes())


def matrix_to_tsv(matrix, hop_seconds: float, frame_zero_time: float = 0.0) -> str:
    m = np.asarray(matrix)
    lines = []
    for i, row in enumerate(m):
        t = frame_zero_time + i * hop_seconds
        lines.append("\t".join([f"{t:.6f}"] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"
