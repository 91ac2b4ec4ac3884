"""
OPLR1 binary matrix files.

Layout: 8-byte magic ``b"OPLORA1\\0"``, rows (u64 LE), cols (u64 LE), then
rows*cols float64 LE values in row-major order.
"""
import struct

import numpy as np

from .densela import as_matrix
from .errors import DataError, FormatError

MAGIC = b"OPLORA1\x00"
_HEADER = struct.Struct("<8sQQ")


def to_bytes(m):
    a = as_matrix(m)
    rows, cols = a.shape
    return _HEADER.pack(MAGIC, rows, cols) + a.astype("<f8").tobytes(order="C")


def from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated OPLR1 header ({len(buf)} bytes)")
    magic, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid shape {rows}x{cols}")
    need = _HEADER.size + 8 * rows * cols
    if len(buf) != need:
        raise FormatError(f"payload is {len(buf)} bytes, expected {need}")
    a = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    a = a.astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise DataError("matrix file contains NaN or Inf")
    return a


def write_matrix(path, m):
    with open(path, "wb") as fh:
        fh.write(to_bytes(m))


def read_matrix(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
