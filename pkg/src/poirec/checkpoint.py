"""Binary checkpoints: named tensor sections with a JSON manifest.
Round trips are bit-exact; writes are atomic (temp file + rename)."""

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PCKP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays, meta=None):
    """arrays: {name: ndarray}; meta: JSON-serializable dict (config, step
    counters, ...)."""
    path = Path(path)
    manifest = {
        "version": VERSION,
        "meta": meta or {},
        "tensors": [
            {"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in arrays.items()
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r} in {path}")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(
                f"checkpoint version {version}, this build reads {VERSION}")
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        arrays = {}
        for entry in manifest["tensors"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(
                entry["shape"]).copy()
    return arrays, manifest["meta"]
