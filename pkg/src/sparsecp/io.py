"""Reading and writing the DNT1 dense container format.

Layout, all little-endian:

====================  =======================================
bytes 0..3            magic ``b"DNT1"``
uint32                number of modes ``N``
``N`` x uint64        extents
``prod(extents)`` x float64  values, first mode fastest
====================  =======================================

Matrices are stored as the ``N = 2`` case.
"""

import math
import struct

import numpy as np

from .errors import DntFormatError
from .tensor import DenseTensor

MAGIC = b"DNT1"
_HEADER = struct.Struct("<4sI")


def write_dnt(path, data):
    """Write a tensor or matrix to ``path`` in DNT1 layout."""
    if not isinstance(data, DenseTensor):
        data = DenseTensor(np.asarray(data, dtype=np.float64))
    shape = data.shape
    payload = data.ravel().astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(shape)))
        fh.write(struct.pack(f"<{len(shape)}Q", *shape))
        fh.write(payload.tobytes())


def read_dnt(path):
    """Read a DNT1 file into a :class:`DenseTensor`.

    Raises
    ------
    DntFormatError
        On a bad magic, truncated payload, trailing bytes, or non-finite
        values.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DntFormatError(f"{path}: too short for a DNT1 header")
    magic, order = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DntFormatError(f"{path}: bad magic {magic!r}")
    if order < 1:
        raise DntFormatError(f"{path}: mode count must be >= 1, got {order}")
    offset = _HEADER.size
    extents_end = offset + 8 * order
    if len(raw) < extents_end:
        raise DntFormatError(f"{path}: truncated extent list")
    shape = struct.unpack_from(f"<{order}Q", raw, offset)
    if any(s < 1 for s in shape):
        raise DntFormatError(f"{path}: extents must all be >= 1, got {shape}")
    count = math.prod(shape)
    expected = extents_end + 8 * count
    if len(raw) < expected:
        raise DntFormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise DntFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=extents_end)
    try:
        return DenseTensor.from_flat(shape, values.astype(np.float64))
    except ValueError as exc:
        raise DntFormatError(f"{path}: {exc}") from exc


def read_matrix(path):
    """Read a DNT1 file that must hold a matrix; returns a 2-D ndarray."""
    t = read_dnt(path)
    if t.order != 2:
        raise DntFormatError(f"{path}: expected a matrix, got {t.order} modes")
    return np.asarray(t.data)
