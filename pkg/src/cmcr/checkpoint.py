"""Single-file array container used for checkpoints and attention dumps.

Layout: 8-byte magic, little-endian uint64 header length, a UTF-8 JSON
header, then the raw little-endian array bytes at the offsets the header
lists. Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"CMCRARR1"


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC or len(data) < 16:
        raise CheckpointError(f"{path} is not an array container (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated at array {e['name']}")
        buf = data[start : start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save_checkpoint(path, model, optimizer=None, step: int = 0, extra: dict | None = None) -> Path:
    arrays = {f"model.{k}": v for k, v in model.state_arrays().items()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    meta = {
        "kind": "checkpoint",
        "config": model.cfg.to_dict(),
        "fingerprint": model.cfg.fingerprint(),
        "step": int(step),
        "adam_step": optimizer.step_count if optimizer is not None else 0,
    }
    meta.update(extra or {})
    return save_arrays(path, arrays, meta)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} holds {meta.get('kind', 'unknown')!r} arrays, not a checkpoint")
    return arrays, meta


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore model (and optimizer) state in place; returns the header metadata."""
    arrays, meta = read_checkpoint(path)
    want = model.cfg.fingerprint()
    if meta.get("fingerprint") != want:
        raise CheckpointError(f"config fingerprint mismatch: checkpoint {meta.get('fingerprint')} vs model {want}")
    model.load_state_arrays({k[len("model.") :]: v for k, v in arrays.items() if k.startswith("model.")})
    if optimizer is not None:
        optimizer.load_state_arrays(arrays, meta.get("adam_step", 0))
    return meta
