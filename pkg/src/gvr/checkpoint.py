"""Checkpoint container: JSON header plus named float32 tensors.

Layout: magic ``GVRC``, u32 version, u64 header length, UTF-8 JSON header,
then the raw little-endian float32 data of every tensor in sorted-name
order. The header records shapes and offsets, so the layout is deterministic
for a given set of names.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from gvr.errors import FormatError

MAGIC = b"GVRC"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def save_tensors(path, named: dict[str, np.ndarray], header: dict) -> None:
    names = sorted(named)
    directory = {}
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(named[name], dtype="<f4")
        directory[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.nbytes
    doc = dict(header)
    doc["tensors"] = directory
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(named[name], dtype="<f4").tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: not a checkpoint file")
    magic, version, hlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_HEADER.size:_HEADER.size + hlen].decode("utf-8"))
    base = _HEADER.size + hlen
    out = {}
    for name, meta in header["tensors"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + meta["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=start).reshape(shape)
        out[name] = arr.copy()
    return out, header
