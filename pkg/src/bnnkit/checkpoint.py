"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   b"BNCK"
    u32     format version (1)
    u32     metadata length L
    bytes   L bytes of UTF-8 JSON metadata (config dict, provenance,
            seeds, step counters, content hash of the array section)
    u32     array count
    per array:
        u16   name length, bytes name (UTF-8)
        u8    dtype code (see _DTYPES)
        u8    ndim, u32 * ndim dims
        bytes raw little-endian array data

Writes are atomic (temp file + rename). load(save(x)) is bit-exact,
including packed binary weight snapshots stored as uint8 arrays.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

_MAGIC = b"BNCK"
_VERSION = 1
_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8", 3: "<i4", 4: "u1", 5: "<u4"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def _array_section(arrays: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _DTYPE_CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(_DTYPES[code]).tobytes())
    return b"".join(out)


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    section = _array_section(arrays)
    meta = dict(meta)
    meta["format_version"] = _VERSION
    meta["content_sha256"] = hashlib.sha256(section).hexdigest()
    mb = json.dumps(meta, sort_keys=True).encode()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(mb)))
        f.write(mb)
        f.write(section)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    version, mlen = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(data[12:12 + mlen].decode())
    pos = 12 + mlen
    section = data[pos:]
    if meta.get("content_sha256") != hashlib.sha256(section).hexdigest():
        raise CheckpointError("array section hash mismatch")
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype=dt, count=n, offset=pos)
        pos += n * dt.itemsize
        arrays[name] = arr.reshape(shape).copy()
    return meta, arrays


def checkpoint_hash(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()
