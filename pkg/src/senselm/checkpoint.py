"""Flat named-tensor checkpoint container.

Layout: magic, u32 header length, JSON header (names, shapes, dtypes, byte
offsets, free-form meta), then the raw little-endian buffers. Round-trips are
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

_MAGIC = b"SLMC\x01"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i8": np.dtype("<i8")}


def save_checkpoint(path, state: dict, meta: dict | None = None) -> None:
    entries = []
    offset = 0
    buffers = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        dtype = arr.dtype.newbyteorder("<")
        if dtype.str not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for '{name}'")
        raw = arr.astype(dtype, copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": dtype.str, "offset": offset, "nbytes": len(raw)})
        buffers.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        if fh.read(5) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint container")
        header_len = int(np.frombuffer(fh.read(4), "<u4")[0])
        header = json.loads(fh.read(header_len).decode("utf-8"))
        blob = fh.read()
    state = {}
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"unknown dtype {entry['dtype']!r}")
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        arr = np.frombuffer(blob[lo:hi], dtype).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(dtype.newbyteorder("="))
    return state, header.get("meta", {})


def state_hash(state: dict) -> str:
    """Order-independent content hash of a named-tensor state."""
    digest = hashlib.sha256()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.shape).encode("utf-8"))
        digest.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return digest.hexdigest()


def file_hash(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()
