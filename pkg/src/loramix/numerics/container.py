"""Binary tensor container plus JSON sidecar.

Each record is ``b"P4TZ"``, a little-endian u32 rank, ``rank`` little-endian
u64 extents, then the float64 little-endian payload. The sidecar
(``<path>.json``) lists the tensor names in record order together with any
caller metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"P4TZ"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_tensor(array) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(buf: bytes, offset: int = 0):
    """Decode one record starting at ``offset``; returns (array, next_offset)."""
    if buf[offset : offset + 4] != MAGIC:
        raise ValueError(f"bad magic at byte {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    offset += 8
    shape = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    count = int(np.prod(shape, dtype=np.int64))
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)
    return arr.reshape(shape), offset + 8 * count


def save_tensors(path, tensors: dict, metadata: dict | None = None) -> None:
    """Write ``{name: array-or-Tensor}`` to ``path`` and its JSON sidecar."""
    path = Path(path)
    names = list(tensors)
    with open(path, "wb") as fh:
        for name in names:
            value = tensors[name]
            fh.write(encode_tensor(getattr(value, "data", value)))
    side = {"tensors": names}
    if metadata:
        side["metadata"] = metadata
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True))


def load_tensors(path):
    """Return ``(dict name -> ndarray, metadata)``."""
    path = Path(path)
    side = json.loads(sidecar_path(path).read_text())
    buf = path.read_bytes()
    out, offset = {}, 0
    for name in side["tensors"]:
        out[name], offset = decode_tensor(buf, offset)
    if offset != len(buf):
        raise ValueError(f"{path}: {len(buf) - offset} trailing bytes after last tensor")
    return out, side.get("metadata", {})


def fingerprint(tensors: dict) -> str:
    """64-bit hex digest of names, shapes and raw float bytes, in sorted name order."""
    h = hashlib.blake2b(digest_size=8)
    for name in sorted(tensors):
        arr = np.ascontiguousarray(getattr(tensors[name], "data", tensors[name]), dtype="<f8")
        h.update(name.encode())
        h.update(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        h.update(arr.tobytes())
    return h.hexdigest()
