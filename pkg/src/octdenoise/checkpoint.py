"""Binary checkpoint container.

Layout (little-endian)::

    b"OCTD"  u16 version
    u16 len, kind tag (utf-8)
    u32 len, config block   ("key=value" lines)
    u32 len, metadata block ("key=value" lines)
    u32 parameter count
    per parameter: u16 len, name; u8 rank; rank x u32 extents; float32 values

Parameters are stored as 32-bit floats; float32 models round-trip bit-exactly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"OCTD"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _kv_block(d: dict) -> bytes:
    lines = []
    for k, v in d.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"cannot encode config entry {k!r}")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def _parse_kv(raw: bytes) -> dict:
    out = {}
    for line in raw.decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def encode(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    kind = ckpt.kind.encode("utf-8")
    buf.write(MAGIC + struct.pack("<HH", VERSION, len(kind)) + kind)
    for block in (_kv_block(ckpt.config), _kv_block(ckpt.metadata)):
        buf.write(struct.pack("<I", len(block)) + block)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<H", len(raw_name)) + raw_name)
        buf.write(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not an OCTD checkpoint")
    version, kind_len = r.unpack("<HH")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = r.take(kind_len).decode("utf-8")
    config = _parse_kv(r.take(r.unpack("<I")[0]))
    metadata = _parse_kv(r.take(r.unpack("<I")[0]))
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        name = r.take(r.unpack("<H")[0]).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        if name in params:
            raise CheckpointError(f"duplicate parameter {name!r}")
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after last parameter")
    return Checkpoint(kind, config, params, metadata)


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(ckpt))


def read_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(raw)
