"""ZPTN tensor archive: a flat, ordered name -> float32 array container.

Layout (little-endian)::

    b"ZPTN" | u16 version | u32 count |
    count x ( u32 name_len | name utf-8 | u8 rank | u32 dims[rank] | f32 payload )
"""

from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"ZPTN"
VERSION = 1


class ArchiveError(ValueError):
    pass


def dumps(tensors):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        if arr.ndim > 255:
            raise ArchiveError(f"{name}: rank {arr.ndim} too large")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(data):
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise ArchiveError("not a ZPTN archive (bad magic)")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise ArchiveError(f"unsupported ZPTN version {version}")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos : pos + n]).decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(view, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise ArchiveError(f"truncated ZPTN archive: {exc}") from exc
    if pos != len(view):
        raise ArchiveError("trailing bytes after last tensor")
    return out


def save(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
