"""Deterministic binary container for named arrays plus a JSON meta block.

Layout: 4-byte magic ``TJF1``, 8-byte little-endian header length, UTF-8 JSON
header, then the raw C-order bytes of each array in header order. Arrays are
stored little-endian ('<f8' / '<i8'), names sorted, JSON keys sorted: the
same content always produces the same bytes, which npz (embedded zip
timestamps) does not guarantee. Checkpoints and feature caches both use it.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

MAGIC = b"TJF1"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _storage_dtype(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "<f8"
    if arr.dtype.kind in "iub":
        return "<i8"
    raise ValueError(f"unsupported array dtype {arr.dtype}")


def save_bundle(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = _storage_dtype(arr)
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        blobs.append(arr.astype(_DTYPES[dt], copy=False).tobytes(order="C"))
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta or {}, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_bundle(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: not a trajformer bundle (magic {magic!r})")
        header_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {header.get('format_version')}")
        arrays = {}
        for entry in header["arrays"]:
            dt = _DTYPES[entry["dtype"]]
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise DataError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return arrays, header["meta"]
