"""Binary named-tensor container.

Layout (all integers little-endian)::

    magic b"AVNT" | u32 version | u32 metadata length | metadata JSON (utf-8)
    u32 tensor count
    per tensor: u16 name length | name | u8 dtype code | u8 ndim | u32 * ndim shape | payload

Payloads are the raw little-endian bytes in C order, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

MAGIC = b"AVNT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<i4"), 4: np.dtype("u1")}
_CODES = {dt: code for code, dt in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _code_for(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
    if dt == np.dtype(bool):
        dt = np.dtype("u1")
    for code, known in _DTYPES.items():
        if known == dt:
            return code
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def dumps(tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _code_for(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError("tensor name too long")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(raw)
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    off = 4
    try:
        version, mlen = struct.unpack_from("<II", blob, off)
        off += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        metadata = json.loads(blob[off : off + mlen].decode("utf-8"))
        off += mlen
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            code, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(blob):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if off != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return out, metadata


def save(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
