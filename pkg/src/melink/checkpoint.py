"""Single-file checkpoint format.

Layout: 8-byte magic, 8-byte little-endian manifest length, JSON manifest
(schema version, config, step, named tensor table with shapes and byte
offsets into the blob region), raw 32-bit little-endian float blobs, and a
trailing 64-bit FNV-1a hash of everything before it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig, canonical_json, config_from_dict
from .errors import DataError
from .hashing import fnv1a64
from .optim import ParamStore
from .tensor import Tensor

MAGIC = b"DWECKPT1"
SCHEMA_VERSION = 1


def save_checkpoint(path: str | Path, store: ParamStore, cfg: TrainConfig) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, t in store.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(t.data.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "step": store.step,
        "tensors": tensors,
    }
    mbytes = canonical_json(manifest).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(mbytes)) + mbytes + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<Q", fnv1a64(body)))


def load_checkpoint(path: str | Path) -> tuple[ParamStore, TrainConfig, dict]:
    """Rebuild the parameter store; raises DataError on any corruption."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(MAGIC) + 16 or raw[:len(MAGIC)] != MAGIC:
        raise DataError(f"checkpoint {path}: bad or missing magic header")
    body, trailer = raw[:-8], raw[-8:]
    if struct.unpack("<Q", trailer)[0] != fnv1a64(body):
        raise DataError(f"checkpoint {path}: content hash mismatch (corrupt file)")
    (mlen,) = struct.unpack("<Q", body[8:16])
    mstart = 16
    if mstart + mlen > len(body):
        raise DataError(f"checkpoint {path}: truncated manifest")
    try:
        manifest = json.loads(body[mstart:mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"checkpoint {path}: unreadable manifest ({e})") from e
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(
            f"checkpoint {path}: schema version {manifest.get('schema_version')} "
            f"!= {SCHEMA_VERSION}")
    cfg = config_from_dict(manifest["config"])
    if manifest.get("config_hash") != cfg.config_hash():
        raise DataError(f"checkpoint {path}: config hash mismatch")

    blob_region = body[mstart + mlen:]
    store = ParamStore()
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob_region):
            raise DataError(
                f"checkpoint {path}: truncated tensor data for {entry['name']!r}")
        arr = np.frombuffer(blob_region[start:start + n], dtype="<f4").copy()
        arr = arr.reshape(entry["shape"]).astype(np.float32)
        store.add(entry["name"], Tensor(arr))
    store.step = int(manifest.get("step", 0))
    return store, cfg, manifest
