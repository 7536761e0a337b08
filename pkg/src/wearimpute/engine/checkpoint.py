"""Self-describing weight container.

Layout::

    b"WIMPCKPT"                      8-byte magic
    uint32 little-endian             header length in bytes
    header                           UTF-8 JSON (sorted keys)
    payload                          concatenated little-endian float64 arrays

The header records the engine version, the model config, its hash, an
optional free-form ``extra`` mapping and, for each tensor, its name, shape
and byte offset into the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

ENGINE_VERSION = "1.0"
MAGIC = b"WIMPCKPT"


def config_hash(config: dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict[str, Any], extra: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "engine_version": ENGINE_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "tensors": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(tensors, header)``; raises ``ValueError`` on a malformed file."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode())
    if header.get("config_hash") != config_hash(header["config"]):
        raise ValueError(f"{path}: config hash does not match the stored config")
    base = 12 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        raw = blob[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return tensors, header
