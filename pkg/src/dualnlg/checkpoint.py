"""Parameter checkpoint files.

Layout (little-endian)::

    magic    8 bytes  b"DUALNLG\\0"
    version  uint32
    hlen     uint32   length of the JSON header
    header   JSON     {"params": [{"name", "shape", "offset", "count"}, ...], "meta": {...}}
    payload  float64 values, row-major, concatenated in header order

Values are written as raw IEEE-754 doubles, so loading is bit-exact.
"""

import json
import struct

import numpy as np

MAGIC = b"DUALNLG\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, arrays, meta=None):
    """Write ``{name: ndarray}`` (insertion order kept) plus JSON-able ``meta``."""
    entries, offset = [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
    header = json.dumps({"params": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path):
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    payload = np.frombuffer(blob[16 + hlen :], dtype="<f8")
    arrays = {}
    for e in header["params"]:
        chunk = payload[e["offset"] : e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return arrays, header["meta"]
