"""Checkpoint container: a JSON manifest plus one raw blob per tensor.

Layout of a container directory::

    manifest.json          format version, metadata, tensor index with sha256
    tensors/<name>.f64     little-endian float64, row-major

Saving is deterministic (sorted keys, no timestamps), so identical content
gives identical bytes. Every load re-hashes each blob.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .nn import DenseLayer, FactoredLayer, ModelGraph

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
_DTYPE = np.dtype("<f8")


class IntegrityError(ValueError):
    """A blob does not match the hash recorded in the manifest."""

    def __init__(self, tensor: str, message: str):
        super().__init__(f"tensor {tensor!r}: {message}")
        self.tensor = tensor


def _blob_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=_DTYPE).tobytes()


def save_container(path, tensors: dict, meta: dict) -> Path:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(tensors):
        array = np.asarray(tensors[name], dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise ValueError(f"tensor {name!r} has non-finite entries")
        blob = _blob_bytes(array)
        rel = f"tensors/{name}.f64"
        (path / rel).write_bytes(blob)
        index[name] = {"file": rel, "shape": list(array.shape), "sha256": hashlib.sha256(blob).hexdigest()}
    manifest = {"format_version": FORMAT_VERSION, "meta": meta, "tensors": index}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_container(path) -> tuple[dict, dict]:
    """Return ``(tensors, meta)``; raises :class:`IntegrityError` on any mismatch."""
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    tensors = {}
    for name, entry in manifest["tensors"].items():
        blob_path = path / entry["file"]
        if not blob_path.is_file():
            raise IntegrityError(name, "blob file is missing")
        blob = blob_path.read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise IntegrityError(name, "sha256 mismatch")
        shape = tuple(entry["shape"])
        if len(blob) != _DTYPE.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(name, f"blob length does not match shape {shape}")
        tensors[name] = np.frombuffer(blob, dtype=_DTYPE).reshape(shape).astype(np.float64)
    return tensors, manifest["meta"]


def save_model(path, model: ModelGraph, extra: dict | None = None) -> Path:
    tensors = {}
    layers = []
    for layer in model.layers:
        entry = {"id": layer.layer_id, "role": layer.role, "shape": [layer.d_out, layer.d_in]}
        if isinstance(layer, DenseLayer):
            entry["kind"] = "dense"
            tensors[f"{layer.layer_id}.w"] = layer.w
        else:
            entry["kind"] = "factored"
            entry["rank"] = layer.rank
            for name in ("u", "s", "v"):
                tensors[f"{layer.layer_id}.{name}"] = getattr(layer, name)
        layers.append(entry)
    meta = {
        "kind": "model",
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "augment_constant": model.augment_constant,
        "layers": layers,
    }
    if extra:
        meta.update(extra)
    return save_container(path, tensors, meta)


def load_model(path) -> tuple[ModelGraph, dict]:
    tensors, meta = load_container(path)
    if meta.get("kind") != "model":
        raise ValueError(f"{path} is not a model checkpoint")
    layers = []
    for entry in meta["layers"]:
        lid = entry["id"]
        if entry["kind"] == "dense":
            layers.append(DenseLayer(lid, tensors[f"{lid}.w"], entry["role"]))
        else:
            layers.append(
                FactoredLayer(lid, tensors[f"{lid}.u"], tensors[f"{lid}.s"], tensors[f"{lid}.v"], entry["role"])
            )
    return ModelGraph(layers, meta["input_dim"], meta["augment_constant"]), meta
