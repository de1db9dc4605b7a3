"""Checkpoint format: a JSON manifest plus one raw little-endian float64 file.

Tensors are stored back to back in ``tensors.bin``; the manifest records
each tensor's name, shape, byte offset and byte length.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..exceptions import CheckpointError

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
DATA = "tensors.bin"
_LE_F8 = np.dtype("<f8")


def save_tensors(path, tensors: Mapping[str, np.ndarray], seed=None, extra: Mapping[str, Any] | None = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / DATA, "wb") as fh:
        for name, arr in tensors.items():
            buf = np.ascontiguousarray(arr, dtype=_LE_F8).tobytes()
            fh.write(buf)
            entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
            offset += len(buf)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float64-le",
        "seed": seed,
        "tensors": entries,
        "extra": dict(extra or {}),
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        raw = (path / DATA).read_bytes()
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint at {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"tensor {e['name']} runs past end of data file")
        arr = np.frombuffer(raw, dtype=_LE_F8, count=e["nbytes"] // 8, offset=e["offset"])
        tensors[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return tensors, manifest
