"""Byte-stable container for named arrays.

Layout::

    COHORTPARITY-ARRAYS 1\\n
    <one-line JSON header>\\n
    <raw array bytes, concatenated in header order>

The header is ``{"meta": {...}, "arrays": [{"name", "dtype", "shape"}, ...]}``
with sorted keys. Arrays are stored little-endian, row-major (C order), so a
file round-trips bit-exactly and identical inputs give identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"COHORTPARITY-ARRAYS 1\n"
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    entries, blobs = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = "f8" if arr.dtype.kind == "f" else "i8"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = json.dumps({"meta": dict(meta), "arrays": entries}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a cohortparity array file")
        header = json.loads(fh.readline().decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            shape = tuple(entry["shape"])
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = fh.read(n * dtype.itemsize)
            if len(buf) != n * dtype.itemsize:
                raise ValueError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(
                dtype.newbyteorder("="))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes")
    return arrays, header["meta"]
