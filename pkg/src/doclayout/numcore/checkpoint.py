"""Binary checkpoint format.

Layout: the 4 magic bytes ``VSR1``, a little-endian uint64 header length,
a UTF-8 JSON header mapping parameter name to ``{"shape", "offset"}``, then
the raw little-endian float64 blobs. Offsets count from the first blob byte.
An optional ``__meta__`` header entry carries free-form run metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VSR1"
META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    header: dict = {}
    blobs = []
    offset = 0
    for name in sorted(state):
        if name == META_KEY:
            raise CheckpointError(f"{META_KEY!r} is reserved")
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        header[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    if meta is not None:
        header[META_KEY] = meta
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", buf[4:12])
    try:
        header = json.loads(buf[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    meta = header.pop(META_KEY, None)
    body = memoryview(buf)[12 + hlen :]
    state = {}
    for name, entry in header.items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(body):
            raise CheckpointError(f"truncated blob for {name!r}")
        state[name] = np.frombuffer(body[start:end], dtype="<f8").reshape(shape).astype(np.float64)
    return state, meta


def save(path, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(state, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict | None]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(buf)
