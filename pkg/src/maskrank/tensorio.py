"""Binary and JSON tensor files.

Binary layout (all little-endian)::

    b"MTEN" | u8 version (=1) | u8 rank | rank x u32 dims | prod(dims) x f64

The JSON alternative is ``{"shape": [...], "data": [...]}`` with a flat,
row-major ``data`` list.  ``load_tensor`` sniffs the magic bytes, so either
format is accepted wherever a tensor path is expected.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MTEN"
VERSION = 1
_HEADER = 4 + 1 + 1
_MAX_DIM = 2**32 - 1


def encode_tensor(tensor) -> bytes:
    arr = np.asarray(tensor, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds 255")
    if any(d > _MAX_DIM for d in arr.shape):
        raise FormatError(f"dimension overflow in shape {arr.shape}")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER:
        raise FormatError(f"truncated header at byte 0: need {_HEADER} bytes, have {len(buf)}")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic at byte 0: {buf[:4]!r}")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    dims_end = _HEADER + 4 * rank
    if len(buf) < dims_end:
        raise FormatError(
            f"truncated dims at byte {_HEADER}: expected {dims_end} bytes, have {len(buf)}"
        )
    shape = struct.unpack_from(f"<{rank}I", buf, _HEADER)
    count = int(np.prod(shape, dtype=np.uint64)) if rank else 1
    expected = dims_end + 8 * count
    if len(buf) != expected:
        kind = "truncated payload" if len(buf) < expected else "trailing bytes"
        raise FormatError(
            f"{kind} at byte {dims_end}: expected total length {expected}, actual {len(buf)}"
        )
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=dims_end)
    return data.reshape(shape).astype(np.float64)


def tensor_to_json(tensor) -> dict:
    arr = np.asarray(tensor, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def tensor_from_json(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise FormatError("JSON tensor must be an object with 'shape' and 'data'")
    shape = tuple(int(d) for d in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64).ravel()
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise FormatError(f"JSON tensor: shape {shape} needs {expected} values, got {data.size}")
    return data.reshape(shape)


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == MAGIC:
        return decode_tensor(buf)
    try:
        obj = json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: neither MTEN binary nor JSON tensor ({exc})") from None
    return tensor_from_json(obj)


def save_tensor(tensor, path) -> None:
    """Write binary MTEN, or the JSON form when the suffix is ``.json``."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(tensor_to_json(tensor)))
    else:
        path.write_bytes(encode_tensor(tensor))
