"""Bit-exact checkpoint container.

Layout: magic b"BNDSPOT1", a 4-byte little-endian manifest length, a UTF-8
JSON manifest ({"meta": ..., "tensors": [{"name", "shape", "offset"}]}),
then the raw little-endian float64 tensor blobs in manifest order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError

MAGIC = b"BNDSPOT1"


def save_checkpoint(path, tensors, meta=None):
    """Write (name, array) pairs plus a metadata dict; atomic replace."""
    records = []
    blobs = []
    offset = 0
    for name, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f8")
        records.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"meta": meta or {}, "tensors": records},
                          sort_keys=True).encode("utf-8")
    payload = MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(blobs)
    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint; returns (meta, {name: float64 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    (mlen,) = struct.unpack("<I", blob[8:12])
    try:
        manifest = json.loads(blob[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}") from exc
    base = 12 + mlen
    tensors = {}
    for rec in manifest["tensors"]:
        shape = tuple(rec["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = base + rec["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=start)
        tensors[rec["name"]] = arr.reshape(shape).astype(np.float64)
    return manifest["meta"], tensors


def restore_tensors(tensors, targets):
    """Copy checkpoint arrays into (name, destination-array) pairs in place."""
    for name, dst in targets:
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        src = tensors[name]
        if src.shape != dst.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {src.shape} vs model {dst.shape}")
        dst[...] = src
