"""Binary parameter-checkpoint files.

Layout (little-endian):
    magic  b"SMS1"
    version u32          (currently 1)
    count   u32          number of parameter records
    meta_len u32 + meta  UTF-8 JSON block: model hyperparameters
    records              per parameter: name_len u32, UTF-8 name,
                         rank u32, dims u32 x rank, float32 data

Arrays are stored as 32-bit floats regardless of the in-memory dtype.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"SMS1"
VERSION = 1


def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays + a JSON metadata block to a checkpoint file."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        for name, arr in params.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns ({name: float32 array}, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack_from("<I", blob, 12)
        pos = 16
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8")) if meta_len else {}
        pos += meta_len
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
            params[name] = arr
    except (struct.error, UnicodeDecodeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if len(params) != count:
        raise CheckpointError(f"{path}: expected {count} parameters, read {len(params)}")
    return params, meta
