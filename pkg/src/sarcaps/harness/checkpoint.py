"""Versioned binary checkpoints.

Layout (little-endian)::

    b"SCKP" | u16 version | u32 meta length | meta JSON
    | u32 tensor count | per tensor: u16 name length, name, u8 ndim,
      u32 dims..., u64 byte offset into the data block
    | data block of float32 values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict, meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    head = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes,
            struct.pack("<I", len(tensors))]
    blobs, offset = [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        key = name.encode()
        head.append(struct.pack("<H", len(key)) + key)
        head.append(struct.pack(f"<B{data.ndim}I", data.ndim, *data.shape))
        head.append(struct.pack("<Q", offset))
        blobs.append(data.tobytes())
        offset += data.nbytes
    Path(path).write_bytes(b"".join(head + blobs))


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    try:
        return _parse(raw, path)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None


def _parse(raw: bytes, path) -> tuple[dict, dict]:
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    meta = json.loads(raw[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        entries.append((name, shape, offset))
    tensors = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        start = pos + offset
        if start + 4 * n > len(raw):
            raise CheckpointError(f"{path}: tensor {name} runs past end of file")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=start).reshape(shape).astype(np.float32)
    return tensors, meta
