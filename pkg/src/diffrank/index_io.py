"""Binary persistence for :class:`SparsifiedInverse`.

Layout (all little-endian)::

    magic       8 bytes  b"DIFFINV\\x00"
    version     uint32
    value code  uint32   0 = float32, 1 = float64
    n           uint64
    L           uint64
    alpha       float64
    meta length uint32
    meta        UTF-8 JSON
    n blocks    [L x int32 row ids][L x value]
    crc32       uint32 over every preceding byte

so the file size is ``header + n * L * (4 + value size) + 4``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np

from .offline import SparsifiedInverse

MAGIC = b"DIFFINV\x00"
VERSION = 1
_FIXED = struct.Struct("<8sIIQQdI")
_VALUE_TYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_VALUE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class IndexFormatError(ValueError):
    pass


def _block_dtype(L: int, value_dtype: np.dtype) -> np.dtype:
    return np.dtype([("ids", "<i4", (L,)), ("values", value_dtype, (L,))])


def header_size(meta: dict) -> int:
    return _FIXED.size + len(json.dumps(meta, sort_keys=True).encode("utf-8"))


def expected_file_size(n: int, L: int, meta: dict, value_dtype=np.float32) -> int:
    return header_size(meta) + n * L * (4 + np.dtype(value_dtype).itemsize) + 4


def save_index(idx: SparsifiedInverse, path: Union[str, Path], value_dtype=None) -> int:
    """Write ``idx``; returns the number of bytes written.

    Values are stored in their in-memory precision unless ``value_dtype``
    asks for a conversion.
    """
    vdt = np.dtype(value_dtype if value_dtype is not None else idx.values.dtype)
    if vdt not in _VALUE_CODES:
        raise ValueError(f"unsupported value dtype {vdt}; use float32 or float64")
    meta_bytes = json.dumps(idx.meta, sort_keys=True).encode("utf-8")
    header = _FIXED.pack(MAGIC, VERSION, _VALUE_CODES[vdt], idx.n, idx.L, float(idx.alpha), len(meta_bytes)) + meta_bytes
    blocks = np.empty(idx.n, dtype=_block_dtype(idx.L, vdt.newbyteorder("<")))
    blocks["ids"] = idx.ids
    blocks["values"] = idx.values
    crc = zlib.crc32(header)
    crc = zlib.crc32(memoryview(blocks).cast("B"), crc)
    with open(path, "wb") as f:
        f.write(header)
        blocks.tofile(f)
        f.write(struct.pack("<I", crc))
    return len(header) + blocks.nbytes + 4


def load_index(path: Union[str, Path], verify: bool = True) -> SparsifiedInverse:
    data = Path(path).read_bytes()
    if len(data) < _FIXED.size:
        raise IndexFormatError(f"{path}: truncated header")
    magic, version, code, n, L, alpha, meta_len = _FIXED.unpack_from(data)
    if magic != MAGIC:
        raise IndexFormatError(f"{path}: bad magic {magic!r}, not a sparsified-inverse index")
    if version != VERSION:
        raise IndexFormatError(f"{path}: format version {version} is not supported (expected {VERSION})")
    if code not in _VALUE_TYPES:
        raise IndexFormatError(f"{path}: unknown value type code {code}")
    off = _FIXED.size + meta_len
    dt = _block_dtype(L, _VALUE_TYPES[code])
    if len(data) != off + n * dt.itemsize + 4:
        raise IndexFormatError(f"{path}: expected {off + n * dt.itemsize + 4} bytes, found {len(data)} (truncated?)")
    if verify:
        (stored,) = struct.unpack_from("<I", data, len(data) - 4)
        if zlib.crc32(memoryview(data)[:-4]) != stored:
            raise IndexFormatError(f"{path}: checksum mismatch")
    meta = json.loads(data[_FIXED.size : off].decode("utf-8"))
    blocks = np.frombuffer(data, dtype=dt, count=n, offset=off)
    ids = np.ascontiguousarray(blocks["ids"]).astype(np.int32, copy=False)
    values = np.ascontiguousarray(blocks["values"]).astype(_VALUE_TYPES[code].newbyteorder("="), copy=False)
    return SparsifiedInverse(ids, values, alpha, meta)
