"""Binary checkpoint container.

Byte layout (all integers little-endian):

    magic   4 bytes  b"PRC1"
    version u32      currently 1
    q       u32      polynomial order of the saved models
    topo    32 bytes sha256 of the sorted (name, shape) listing
    count   u32      number of named arrays
    then per array, sorted by name:
      name_len u16, name bytes (utf-8),
      ndim u8, dims u32 * ndim,
      data float32 little-endian, C order

Sorting plus the fixed encoding makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PRC1"
VERSION = 1


def topology_hash(arrays):
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(struct.pack("<B", arrays[name].ndim))
        h.update(struct.pack(f"<{arrays[name].ndim}I", *arrays[name].shape))
    return h.digest()


def save_checkpoint(path, arrays, q):
    """Write named float32 arrays; names must be unique, values are cast."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, int(q))
    blob += topology_hash(arrays)
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes(order="C")
    path.write_bytes(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict, q). Verifies the header and
    the stored topology hash."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    version, q = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    stored_hash = raw[12:44]
    (count,) = struct.unpack_from("<I", raw, 44)
    offset = 48
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        arrays[name] = arr.copy()
    if topology_hash(arrays) != stored_hash:
        raise ValueError(f"{path}: topology hash mismatch (corrupt or renamed arrays)")
    return arrays, q
