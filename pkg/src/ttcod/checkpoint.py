"""Binary checkpoint format.

Layout, all integers little-endian::

    b"STTC"  u32 version  u32 entry_count
    per entry (sorted by name):
        u32 name_len, name (UTF-8), u8 frozen, u32 rank, rank * u64 dims,
        float32 data (row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STTC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray], frozen) -> bytes:
    frozen = set(frozen)
    unknown = frozen - set(params)
    if unknown:
        raise CheckpointError(f"frozen names not present in params: {sorted(unknown)}")
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        # asarray keeps rank-0 entries rank-0 (ascontiguousarray would promote them)
        arr = np.asarray(params[name], dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", name in frozen, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], frozenset[str]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    params, frozen = {}, set()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            flag, rank = struct.unpack_from("<BI", blob, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 4 * size > len(blob):
                raise CheckpointError(f"truncated data for entry {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
            if flag:
                frozen.add(name)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last entry")
    return params, frozenset(frozen)


def save(path, params: dict[str, np.ndarray], frozen) -> None:
    Path(path).write_bytes(dumps(params, frozen))


def load(path) -> tuple[dict[str, np.ndarray], frozenset[str]]:
    return loads(Path(path).read_bytes())
