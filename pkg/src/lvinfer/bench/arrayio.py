"""Shared array persistence: raw little-endian float64 plus a JSON sidecar.

save_array("x") writes x.bin (row-major <f8) and x.json carrying the shape
and any caller metadata; loading reverses it. JSON is always written with
sorted keys so identical content gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

_DTYPE = "<f8"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def save_array(stem: str | Path, arr: np.ndarray, meta: dict | None = None) -> Path:
    """Write <stem>.bin and <stem>.json; returns the .bin path."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    bin_path = stem.with_suffix(".bin")
    arr.astype(_DTYPE).tofile(bin_path)
    sidecar = {
        "dtype": _DTYPE,
        "order": "C",
        "shape": list(arr.shape),
        "meta": meta or {},
    }
    write_json(stem.with_suffix(".json"), sidecar)
    return bin_path


def load_array(stem: str | Path) -> tuple[np.ndarray, dict]:
    """Read an array written by save_array; returns (array, metadata)."""
    stem = Path(stem)
    sidecar = read_json(stem.with_suffix(".json"))
    shape = tuple(sidecar["shape"])
    arr = np.fromfile(stem.with_suffix(".bin"), dtype=sidecar["dtype"])
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise ValueError(
            f"{stem}.bin holds {arr.size} values, sidecar declares shape {shape}"
        )
    return arr.reshape(shape).astype(np.float64), sidecar["meta"]


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
