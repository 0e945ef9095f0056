"""Binary field dumps: magic "GMCF", three little-endian uint32 dims, then
row-major little-endian float32 data.  A text sidecar lists the dumped
fields.  Files are written via a temp file and atomic rename so failed runs
leave either the complete file or nothing."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

MAGIC = b"GMCF"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_field(path, arr: np.ndarray) -> None:
    path = Path(path)
    if arr.ndim != 3:
        raise ValueError(f"field dumps are 3-D, got shape {arr.shape}")
    dims = np.asarray(arr.shape, dtype="<u4").tobytes()
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    _atomic_write(path, MAGIC + dims + body)


def read_field(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    dims = np.frombuffer(raw[4:16], dtype="<u4")
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != int(dims.prod()):
        raise ValueError(f"{path}: payload size {data.size} != dims {tuple(dims)}")
    return data.reshape(tuple(int(d) for d in dims)).copy()


def write_sidecar(path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def write_csv(path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(str(c) for c in row) for row in rows)
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def write_json(path, obj) -> None:
    import json

    _atomic_write(Path(path), (json.dumps(obj, indent=2) + "\n").encode())
