"""Grid-shaped scalar fields and their binary file format.

A RadioMap is an immutable width x height field of nonnegative float values
(received power, distances, residuals). Files use a little-endian layout:
magic ``RFM1``, uint32 width, uint32 height, then width*height float32
values row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAP_MAGIC = b"RFM1"


@dataclass(frozen=True)
class RadioMap:
    width: int
    height: int
    values: np.ndarray  # (height, width) float64, nonnegative

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {v.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("map values must be finite")
        if v.size and v.min() < 0.0:
            raise ValueError("map values must be nonnegative")
        object.__setattr__(self, "values", v)


def map_from_values(values: np.ndarray) -> RadioMap:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a 2-D array")
    h, w = values.shape
    return RadioMap(width=w, height=h, values=values)


def field_values(field) -> np.ndarray:
    """Accept a RadioMap or a bare 2-D array and return the value array."""
    if isinstance(field, RadioMap):
        return field.values
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a RadioMap or a 2-D array")
    return arr


# ----------------------------------------------------------------------
# binary blocks
# ----------------------------------------------------------------------

def radiomap_to_bytes(m: RadioMap) -> bytes:
    head = struct.pack("<4sII", MAP_MAGIC, m.width, m.height)
    body = m.values.astype("<f4").tobytes(order="C")
    return head + body


def radiomap_from_buffer(buf: bytes, offset: int = 0) -> tuple[RadioMap, int]:
    if len(buf) < offset + 12:
        raise FormatError("truncated map block")
    magic, w, h = struct.unpack_from("<4sII", buf, offset)
    if magic != MAP_MAGIC:
        raise FormatError(f"bad map magic {magic!r}")
    offset += 12
    n = w * h
    end = offset + 4 * n
    if len(buf) < end:
        raise FormatError("truncated map payload")
    vals = np.frombuffer(buf, dtype="<f4", count=n, offset=offset)
    values = vals.astype(np.float64).reshape(h, w)
    return RadioMap(width=w, height=h, values=values), end


def save_radiomap(m: RadioMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(radiomap_to_bytes(m))


def load_radiomap(path) -> RadioMap:
    with open(path, "rb") as fh:
        buf = fh.read()
    m, end = radiomap_from_buffer(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after map payload")
    return m


# ----------------------------------------------------------------------
# grayscale export
# ----------------------------------------------------------------------

def quantize_gray(values: np.ndarray) -> np.ndarray:
    """floor(255 * value), clamped to [0, 255]; expects values near [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v).astype(np.uint8)


def write_pgm(values: np.ndarray, path) -> None:
    """Write an 8-bit binary portable graymap (P5)."""
    q = quantize_gray(values)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes(order="C"))
