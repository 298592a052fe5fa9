"""Length-prefixed binary containers: a JSON header followed by raw arrays."""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

__all__ = ["pack", "unpack", "FormatError"]


class FormatError(ValueError):
    pass


def pack(magic: bytes, version: int, header: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize ``header`` plus named little-endian arrays.

    Array dtypes and shapes are recorded in the header so :func:`unpack`
    can rebuild them without a schema.
    """
    layout = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dt, copy=False)
        layout.append([name, dt.str, list(arr.shape)])
        blobs.append(arr.tobytes())
    doc = {"header": header, "arrays": layout}
    hdr = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<HI", version, len(hdr)) + hdr + b"".join(blobs)


def unpack(magic: bytes, version: int, data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[: len(magic)] != magic:
        raise FormatError("bad magic")
    off = len(magic)
    try:
        ver, hlen = struct.unpack_from("<HI", data, off)
    except struct.error as e:
        raise FormatError("truncated header") from e
    if ver != version:
        raise FormatError(f"unsupported format version {ver}")
    off += struct.calcsize("<HI")
    try:
        doc = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError("corrupt header") from e
    off += hlen
    arrays = {}
    for name, dtype, shape in doc["arrays"]:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        if off + nbytes > len(data):
            raise FormatError(f"truncated array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise FormatError("trailing bytes after arrays")
    return doc["header"], arrays
