"""Binary matrix files: little-endian uint64 (rows, cols) header + row-major float64.

A multi-tensor file is a concatenation of such records; a JSON manifest
gives names and original shapes in file order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError

_HEADER = struct.Struct("<QQ")


def _as_matrix(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim == 2:
        return arr
    if arr.ndim < 2:
        return arr.reshape(1, -1)
    return arr.reshape(arr.shape[0], -1)


def _write_record(fh, arr) -> None:
    m = np.ascontiguousarray(_as_matrix(arr))
    fh.write(_HEADER.pack(*m.shape))
    fh.write(m.tobytes())


def _read_record(buf: bytes, offset: int, path) -> tuple[np.ndarray, int]:
    if offset + _HEADER.size > len(buf):
        raise LoadError(f"{path}: truncated header at byte {offset}")
    rows, cols = _HEADER.unpack_from(buf, offset)
    offset += _HEADER.size
    nbytes = rows * cols * 8
    if offset + nbytes > len(buf):
        raise LoadError(f"{path}: truncated data for {rows}x{cols} matrix")
    m = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
    return m.astype(np.float64), offset + nbytes


def write_matrix(path, matrix) -> None:
    with open(path, "wb") as fh:
        _write_record(fh, matrix)


def read_matrix(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from None
    m, end = _read_record(buf, 0, path)
    if end != len(buf):
        raise LoadError(f"{path}: {len(buf) - end} trailing bytes after matrix")
    return m


def write_tensors(bin_path, named: dict[str, np.ndarray]) -> list[dict]:
    """Write arrays in order; returns manifest entries ``{name, shape}``."""
    entries = []
    with open(bin_path, "wb") as fh:
        for name, arr in named.items():
            arr = np.asarray(arr, dtype=np.float64)
            _write_record(fh, arr)
            entries.append({"name": name, "shape": list(arr.shape)})
    return entries


def read_tensors(bin_path, entries: list[dict]) -> dict[str, np.ndarray]:
    try:
        buf = Path(bin_path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read {bin_path}: {exc}") from None
    out = {}
    offset = 0
    for entry in entries:
        m, offset = _read_record(buf, offset, bin_path)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != m.size:
            raise LoadError(f"{bin_path}: tensor {entry['name']!r} has {m.size} values, manifest says {shape}")
        out[entry["name"]] = m.reshape(shape)
    if offset != len(buf):
        raise LoadError(f"{bin_path}: {len(buf) - offset} trailing bytes")
    return out


def write_manifest(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read manifest {path}: {exc}") from None
