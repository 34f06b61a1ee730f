"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CODR"                 magic
    u32                     format version (1)
    u32, bytes              config blob length, UTF-8 config text
    u64                     master seed
    u32                     tensor count
    per tensor:
        u32, bytes          name length, UTF-8 name
        u32                 rank
        u32 * rank          dims
        f32 * prod(dims)    row-major data
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CODR"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], config_text: str, seed: int) -> bytes:
    buf = io.BytesIO()
    blob = config_text.encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<Q", int(seed) & ((1 << 64) - 1)))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")  # tobytes() is row-major; ascontiguousarray would promote 0-d
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def loads(raw: bytes) -> tuple[dict[str, np.ndarray], str, int]:
    """Parse a whole checkpoint; nothing is returned unless every byte checks out."""
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config_text = r.take(r.u32("config length"), "config").decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"config blob is not UTF-8: {e}") from None
    seed = struct.unpack("<Q", r.take(8, "seed"))[0]
    count = r.u32("tensor count")
    tensors = {}
    for k in range(count):
        name = r.take(r.u32(f"name length of tensor {k}"), f"name of tensor {k}").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4").reshape(dims)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        tensors[name] = data.astype(np.float32)
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after last tensor")
    return tensors, config_text, seed


def save(path, tensors: dict[str, np.ndarray], config_text: str, seed: int):
    """Write atomically: a failed write never leaves a partial checkpoint at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(tensors, config_text, seed))
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], str, int]:
    return loads(Path(path).read_bytes())
