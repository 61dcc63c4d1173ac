"""Binary parameter checkpoints.

Layout, all integers and floats little-endian::

    b"QVAE"                       magic, 4 bytes
    u32 version                   currently 1
    u32 count                     number of tensors
    count times:
        u32 name_length
        name_length bytes         UTF-8 tensor name
        u32 rank
        rank times u64            shape
        prod(shape) times f64     row-major payload
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"QVAE"
VERSION = 1


def write_checkpoint(path, tensors):
    """Write a mapping of name -> array (or a ParameterStore)."""
    if hasattr(tensors, "state_dict"):
        tensors = tensors.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_checkpoint(path):
    """Read a checkpoint into an ordered dict of name -> float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        out[name] = arr.astype(np.float64)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out
