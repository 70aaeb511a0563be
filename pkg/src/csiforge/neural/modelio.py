"""Model file: magic, length-prefixed JSON manifest, little-endian f64 blob."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import ParamStore

MAGIC = b"CSIMODL1"


class ModelFileError(ValueError):
    pass


def model_bytes(params: ParamStore, kind: str, config: dict) -> bytes:
    entries = []
    offset = 0
    blobs = []
    for name, t in params.items():
        data = np.ascontiguousarray(t.value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.value.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    manifest = {"kind": kind, "config": config, "params": entries, "blob_bytes": offset}
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(text)) + text + b"".join(blobs)


def save_model(path, params: ParamStore, kind: str, config: dict) -> None:
    Path(path).write_bytes(model_bytes(params, kind, config))


def parse_model(data: bytes):
    """Return ``(kind, config, ParamStore)``."""
    if data[:8] != MAGIC:
        raise ModelFileError("bad magic: not a CSIMODL1 model file")
    if len(data) < 16:
        raise ModelFileError("truncated model file: missing manifest length")
    (n,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + n:
        raise ModelFileError("truncated model file: manifest cut short")
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    blob = data[16 + n:]
    if len(blob) != manifest["blob_bytes"]:
        raise ModelFileError(f"truncated model file: expected {manifest['blob_bytes']} parameter bytes, "
                             f"found {len(blob)}")
    params = ParamStore()
    for e in manifest["params"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"]).reshape(e["shape"])
        params.add(e["name"], arr)
    return manifest["kind"], manifest["config"], params


def load_model(path):
    return parse_model(Path(path).read_bytes())
