"""Checkpoint container: JSON manifest line followed by one little-endian blob.

Layout::

    {"format": "dualmotion-ckpt", "version": 1, "params": [...], "meta": {...}}\\n
    <raw bytes>

Each params entry carries ``name``, ``shape``, ``dtype`` ("<f4"/"<f8") and
``offset``/``nbytes`` into the blob.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT = "dualmotion-ckpt"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.asarray(params[name])
        if arr.dtype.kind not in "fiu":
            raise CheckpointError(f"parameter {name} has non-numeric dtype {arr.dtype}")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "version": 1, "params": entries, "meta": meta or {}}
    header = json.dumps(manifest, sort_keys=True).encode() + b"\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(header)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing manifest line")
    try:
        manifest = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: bad manifest ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    blob = memoryview(raw)[nl + 1:]
    out = {}
    for e in manifest["params"]:
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated data for {e['name']}")
        arr = np.frombuffer(blob[e["offset"]:end], dtype=np.dtype(e["dtype"]))
        out[e["name"]] = arr.reshape(e["shape"]).astype(arr.dtype.newbyteorder("="))
    return out, manifest.get("meta", {})
