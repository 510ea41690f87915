"""Model checkpoints: a JSON manifest plus one raw float64 file per tensor.

Tensor files are little-endian 64-bit floats, row-major, referenced by
relative path from the manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import DenseLayer, Mlp

MANIFEST_NAME = "manifest.json"
_DTYPE = "<f8"


def _write_tensor(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=_DTYPE).tofile(path)


def _read_tensor(path: Path, shape: list[int]) -> np.ndarray:
    arr = np.fromfile(path, dtype=_DTYPE)
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {arr.size}")
    return arr.reshape(shape).astype(np.float64)


def save_mlp(directory: str | Path, net: Mlp, step_count: int = 0, extra: dict | None = None) -> Path:
    """Write the network under `directory`; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers_meta = []
    for i, layer in enumerate(net.layers):
        entry = {
            "in": layer.in_dim,
            "out": layer.out_dim,
            "activation": layer.activation,
            "spectral_norm": layer.spectral_norm,
            "weight": f"layer{i:02d}.weight.bin",
            "bias": f"layer{i:02d}.bias.bin",
        }
        _write_tensor(directory / entry["weight"], layer.weight)
        _write_tensor(directory / entry["bias"], layer.bias)
        if layer.spectral_norm and layer.power_vec is not None:
            entry["power_vec"] = f"layer{i:02d}.power.bin"
            _write_tensor(directory / entry["power_vec"], layer.power_vec)
        layers_meta.append(entry)
    manifest = {
        "format": "dense-mlp-v1",
        "input_scale": net.input_scale,
        "step_count": step_count,
        "layers": layers_meta,
    }
    if extra:
        manifest["extra"] = extra
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_mlp(directory: str | Path) -> tuple[Mlp, dict]:
    """Load a network saved by save_mlp; returns (net, manifest)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("format") != "dense-mlp-v1":
        raise ValueError(f"unsupported checkpoint format in {directory}")
    layers = []
    for entry in manifest["layers"]:
        weight = _read_tensor(directory / entry["weight"], [entry["out"], entry["in"]])
        bias = _read_tensor(directory / entry["bias"], [entry["out"]])
        layer = DenseLayer(weight, bias, entry["activation"], entry["spectral_norm"])
        if "power_vec" in entry:
            layer.power_vec = _read_tensor(directory / entry["power_vec"], [entry["in"]])
        layers.append(layer)
    return Mlp(layers, input_scale=manifest["input_scale"]), manifest
