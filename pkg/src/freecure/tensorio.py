"""Flat binary tensor container (FCT1).

Layout: magic ``FCT1``, u32 rank, u32 dims[rank], float32 data,
little-endian, row-major. Scalars are stored as rank-1 tensors of length 1.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import TensorFormatError

MAGIC = b"FCT1"
_MAX_RANK = 32


def write_tensor(path, arr) -> None:
    """Serialize an array to ``path``.

    Rejects empty dimensions and non-finite values before touching the file.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0:
        raise ValueError("tensors with an empty dimension are not representable")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    data = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(data.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`. Returns float32."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank < 1 or rank > _MAX_RANK:
        raise TensorFormatError(f"{path}: implausible rank {rank}")
    header_end = 8 + 4 * rank
    if len(blob) < header_end:
        raise TensorFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: empty dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    expected = header_end + 4 * count
    if len(blob) != expected:
        raise TensorFormatError(
            f"{path}: payload size {len(blob)} does not match header ({expected})"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=header_end)
    return flat.reshape(dims).copy()
