# condaudio/dataset/codec.py
# Contour files (all integers little-endian):
#   b"ACND" | u16 version | u8 kind | u8 ndim | u32 dims... | float32 payload
# kind: 0 pitch, 1 energy (L), 2 timestamp grid (D x L), 3 class object (L x H).
from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from condaudio.core.conditions import TimestampGrid
from condaudio.core.dsp import Contour
from condaudio.errors import FormatError, ParameterError

MAGIC = b"ACND"
VERSION = 1
KINDS = ("pitch", "energy", "grid", "object")

Stored = Union[Contour, TimestampGrid, np.ndarray]


def encode_contour(value: Stored, kind: str) -> bytes:
    if kind not in KINDS:
        raise ParameterError(f"unknown contour kind: {kind!r}")
    if kind in ("pitch", "energy"):
        if not isinstance(value, Contour):
            raise ParameterError(f"{kind} files hold a Contour")
        array = value.values
    elif kind == "grid":
        array = value.grid if isinstance(value, TimestampGrid) else np.asarray(value)
        if array.ndim != 2:
            raise ParameterError("grid files hold a D x L matrix")
    else:
        array = np.asarray(value)
        if array.ndim != 2:
            raise ParameterError("object files hold an L x H matrix")
    array = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<HBB", VERSION, KINDS.index(kind), array.ndim)
    return header + struct.pack(f"<{array.ndim}I", *array.shape) + array.tobytes()


def decode_contour(data: bytes, frame_rate: float = 100.0, source: str = "<bytes>") -> Stored:
    """Inverse of encode_contour. Pitch frames with value 0 come back unvoiced."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{source}: not a contour file (bad magic)")
    version, kind_id, ndim = struct.unpack_from("<HBB", data, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported contour version {version} (expected {VERSION})")
    if kind_id >= len(KINDS):
        raise FormatError(f"{source}: unknown contour kind {kind_id}")
    kind = KINDS[kind_id]
    offset = 8 + 4 * ndim
    if len(data) < offset:
        raise FormatError(f"{source}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    count = int(np.prod(shape)) if ndim else 1
    if len(data) != offset + 4 * count:
        raise FormatError(f"{source}: payload has {len(data) - offset} bytes, expected {4 * count}")
    array = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)

    if kind == "pitch":
        return Contour(array, array != 0, frame_rate)
    if kind == "energy":
        return Contour.dense(array, frame_rate)
    if kind == "grid":
        return TimestampGrid(array.astype(np.uint8), frame_rate)
    return array.astype(np.float32)


def write_contour(path: Union[str, Path], value: Stored, kind: str) -> None:
    Path(path).write_bytes(encode_contour(value, kind))


def read_contour(path: Union[str, Path], frame_rate: float = 100.0) -> Stored:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read contour {path}: {e}") from e
    return decode_contour(data, frame_rate, str(path))
