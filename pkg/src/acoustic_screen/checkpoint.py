"""Versioned little-endian container for named tensors.

Layout::

    magic "ASCK" | u16 version | u16 reserved | u32 meta_len | meta (UTF-8 JSON)
    u32 n_tensors | per tensor: u16 name_len, name, u8 dtype, u8 ndim, u32 dims..., raw data
    u32 CRC-32 of everything above

The JSON meta carries a ``tag`` ("classifier" or "ssl") plus the
architecture signature.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"ASCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HHI", VERSION, 0, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", _CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    version = struct.unpack_from("<H", raw, 4)[0]
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpoint(f"{path}: checksum mismatch (truncated or damaged)")
    try:
        meta_len = struct.unpack_from("<I", body, 8)[0]
        pos = 12
        meta = json.loads(body[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise CorruptCheckpoint(f"{path}: tensor {name} truncated")
            tensors[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if pos != len(body):
        raise CorruptCheckpoint(f"{path}: trailing bytes")
    return meta, tensors
