"""Parameter checkpoints: a JSON manifest plus a raw little-endian float32 blob.

``model.json`` records tensor names, shapes and byte offsets into
``model.bin`` alongside arbitrary metadata (config, seed, step).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError

FORMAT = "smcforge-checkpoint"
FORMAT_VERSION = 1


def blob_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    blob = blob_path(path)
    entries, parts, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        parts.append(data)
        offset += len(data)
    blob.write_bytes(b"".join(parts))
    manifest = {"format": FORMAT, "version": FORMAT_VERSION, "blob": blob.name, "tensors": entries, **meta}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise ValidationError(f"{path} is not a version {FORMAT_VERSION} {FORMAT} manifest")
    raw = (path.parent / manifest["blob"]).read_bytes()
    arrays = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(raw):
            raise ValidationError(f"{manifest['blob']} is truncated: tensor {e['name']} ends at byte {end}")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f4", count=e["nbytes"] // 4,
                                          offset=e["offset"]).reshape(e["shape"]).astype(np.float32)
    meta = {k: v for k, v in manifest.items() if k not in ("format", "version", "blob", "tensors")}
    return arrays, meta
