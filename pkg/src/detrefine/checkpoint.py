"""Binary checkpoint container for trainable parameters.

Layout (all integers little-endian):

    magic   b"DRCP"
    u16     format version (currently 1)
    u32     metadata length, followed by that many bytes of UTF-8 JSON
    u32     entry count
    entry*  u16 name length + UTF-8 hierarchical name
            u8 ndim, ndim * u64 dims
            float64 raw values, C order

The metadata block records the configuration fingerprint so loaders can
reject checkpoints that do not match the runtime setup.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InputError

MAGIC = b"DRCP"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise InputError("checkpoint file is truncated")
    return data


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise InputError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, meta_len).decode("utf-8")) if meta_len else {}
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(_read_exact(fh, 8 * n_items), dtype="<f8")
            arr = arr.reshape(shape).astype(np.float64)
            if not np.all(np.isfinite(arr)):
                raise InputError(f"checkpoint tensor {name!r} has non-finite values")
            tensors[name] = arr
    return tensors, meta
