"""Sectioned little-endian checkpoint files.

Layout: ``b"LIAF"``, u16 version, then until EOF one section per array:
u16 name length, UTF-8 name, u8 rank, u32 extent per axis, f64 payload
(row-major). Non-array metadata (network spec, RNG state, epoch) travels as
JSON text stored byte-per-element in a section named ``__meta__.json``.
Sections are written in sorted name order so equal contents give equal bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LIAF"
VERSION = 1
META_KEY = "__meta__.json"


class CheckpointError(ValueError):
    pass


def encode(arrays: dict, meta: dict | None = None) -> bytes:
    arrays = dict(arrays)
    if meta is not None:
        text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        arrays[META_KEY] = np.frombuffer(text, dtype=np.uint8).astype(np.float64)
    out = [MAGIC, struct.pack("<H", VERSION)]
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        nb = name.encode()
        if len(nb) > 0xFFFF or a.ndim > 0xFF:
            raise CheckpointError(f"section {name!r} too large to encode")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def decode(data: bytes):
    """Returns ``(arrays, meta)``; ``meta`` is ``None`` when absent."""
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < 6:
        raise CheckpointError("truncated header")
    (ver,) = struct.unpack_from("<H", data, 4)
    if ver != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ver}")
    pos, arrays = 6, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{rank}I", data, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(data):
                raise CheckpointError(f"section {name!r} truncated")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as e:
        raise CheckpointError(f"truncated section header at byte {pos}") from e
    meta = None
    if META_KEY in arrays:
        meta = json.loads(arrays.pop(META_KEY).astype(np.uint8).tobytes().decode())
    return arrays, meta


def save(path, arrays: dict, meta: dict | None = None) -> None:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(arrays, meta))
    os.replace(tmp, path)


def load(path):
    return decode(Path(path).read_bytes())
