"""Self-describing binary container: magic line, one JSON header line, packed arrays.

The header carries an ``arrays`` index of (name, shape) in write order; the
payload is the concatenation of those arrays as row-major little-endian
float64. Everything non-numeric lives in the header.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SEPLL-BIN1\n"


def write_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(header)
    meta["arrays"] = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(blob + b"\n")
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise DataError(f"{path}: not a sepll binary container")
    try:
        end = raw.index(b"\n", len(MAGIC))
        header = json.loads(raw[len(MAGIC):end].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt container header: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    offset = end + 1
    for spec in header.get("arrays", []):
        shape = tuple(int(s) for s in spec["shape"])
        count = math.prod(shape) if shape else 1
        needed = offset + 8 * count
        if needed > len(raw):
            raise DataError(f"{path}: truncated container payload")
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[spec["name"]] = flat.reshape(shape).astype(np.float64)
        offset = needed
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after container payload")
    return header, arrays
