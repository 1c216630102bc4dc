"""Model checkpoint file.

Layout (little-endian): b"DSSW", u8 version, u64 config digest, then one record
per tensor until end of file: u32 name length, UTF-8 name, u32 rank, rank x u32
dims, float32 values in row-major order.
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import CacheCorruptError, ConfigurationError

MAGIC = b"DSSW"
VERSION = 1
_HEAD = struct.Struct("<4sBQ")


def write_tensors(path, digest: int, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [_HEAD.pack(MAGIC, VERSION, digest & 0xFFFFFFFFFFFFFFFF)]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def read_tensors(path) -> Tuple[int, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise CacheCorruptError(f"{path}: truncated checkpoint header")
    magic, version, digest = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CacheCorruptError(f"{path}: bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CacheCorruptError(f"{path}: unsupported checkpoint version {version}")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = _HEAD.size
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            if pos + n > len(blob):
                raise CacheCorruptError(f"{path}: truncated tensor name")
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(blob):
                raise CacheCorruptError(f"{path}: truncated values for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise CacheCorruptError(f"{path}: malformed tensor record ({exc})") from exc
    return digest, out


def save_checkpoint(path, model, extra: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """Write every model parameter (plus optional extra tensors, e.g. optimizer state)."""
    tensors: Dict[str, np.ndarray] = OrderedDict((n, p.data) for n, p in model.named_parameters())
    for name, arr in (extra or {}).items():
        if name in tensors:
            raise ConfigurationError(f"extra tensor {name!r} collides with a parameter name")
        tensors[name] = arr
    write_tensors(path, model.config.digest(), tensors)


def load_checkpoint(path, model) -> "OrderedDict[str, np.ndarray]":
    """Load parameters into ``model`` in place; return the non-parameter tensors."""
    digest, tensors = read_tensors(path)
    if digest != model.config.digest():
        raise ConfigurationError(f"{path}: checkpoint was written for a different network configuration")
    params = OrderedDict(model.named_parameters())
    missing = [n for n in params if n not in tensors]
    if missing:
        raise CacheCorruptError(f"{path}: missing parameters {missing[:3]}")
    for name, p in params.items():
        arr = tensors.pop(name)
        if arr.shape != p.shape:
            raise CacheCorruptError(f"{path}: {name} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(p.dtype)
        p.grad = None
    return tensors
