"""Binary tensor files ("SSDT").

Layout: magic ``SSDT``, u32 version (=1), u8 dtype (0=f32, 1=f64), u32 ndim,
ndim x u32 extents, then the little-endian row-major payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .core import Tensor

MAGIC = b"SSDT"
VERSION = 1
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class SSDTFormatError(ValueError):
    pass


def to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise SSDTFormatError(f"unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack("<IBI", VERSION, _CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes()


def from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise SSDTFormatError("bad magic")
    version, code, ndim = struct.unpack_from("<IBI", buf, 4)
    if version != VERSION:
        raise SSDTFormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise SSDTFormatError(f"unknown dtype code {code}")
    off = 4 + struct.calcsize("<IBI")
    shape = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    dt = _DTYPES[code]
    count = int(np.prod(shape)) if ndim else 1
    if len(buf) - off != count * dt.itemsize:
        raise SSDTFormatError(f"payload size {len(buf) - off} != {count * dt.itemsize}")
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(shape).astype(dt.newbyteorder("="))


def save(path: Union[str, Path], x) -> None:
    """Write atomically (temp file + rename)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(arr))
    os.replace(tmp, path)


def load(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
