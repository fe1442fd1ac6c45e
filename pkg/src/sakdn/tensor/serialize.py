"""Binary tensor container.

Layout: 8-byte magic ``SAKDTNSR``, a little-endian uint32 header length, the
UTF-8 JSON header ``{"shape": [...], "dtype": "f64"|"f32"}``, then the
little-endian row-major payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataFormatError
from .core import Tensor

MAGIC = b"SAKDTNSR"
_DTYPES = {"f64": "<f8", "f32": "<f4"}


def dumps(t: Tensor | np.ndarray, dtype: str = "f64") -> bytes:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    header = json.dumps({"shape": list(arr.shape), "dtype": dtype}, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def loads(buf: bytes) -> Tensor:
    if buf[:8] != MAGIC:
        raise DataFormatError("not a tensor file (bad magic)")
    (hlen,) = struct.unpack("<I", buf[8:12])
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
        dtype = _DTYPES[header["dtype"]]
    except (ValueError, KeyError) as exc:
        raise DataFormatError(f"bad tensor header: {exc}") from exc
    payload = buf[12 + hlen:]
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise DataFormatError(f"payload has {len(payload)} bytes, expected {expected}")
    return Tensor(np.frombuffer(payload, dtype=dtype).reshape(shape))


def save(path: str | Path, t: Tensor | np.ndarray, dtype: str = "f64") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(t, dtype))


def load(path: str | Path) -> Tensor:
    return loads(Path(path).read_bytes())
