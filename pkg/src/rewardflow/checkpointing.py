"""Versioned binary container for named tensors, plus a JSON sidecar.

Layout of a checkpoint directory:

``weights.bin``
    Little-endian container: magic ``b"RFCK"``, version uint32, tensor
    count uint32; then per tensor: name length uint32, UTF-8 name, ndim
    uint32, each dimension uint32, then the payload as float32.
``checkpoint.json``
    JSON metadata (config dict, step counter, seed, loss history, and
    whatever the caller adds). Written with sorted keys so equal metadata
    gives equal bytes.

Saving what :func:`load_checkpoint` returned reproduces both files
byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "CheckpointError",
    "MAGIC",
    "VERSION",
    "write_tensor_file",
    "read_tensor_file",
    "save_checkpoint",
    "load_checkpoint",
    "dict_digest",
]

MAGIC = b"RFCK"
VERSION = 1

_FILE_HEADER = struct.Struct("<4sII")
_U32 = struct.Struct("<I")


class CheckpointError(Exception):
    """Malformed or unreadable checkpoint data."""


def dict_digest(payload: dict) -> str:
    """Stable short hash of a JSON-serializable dict."""
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_tensor_file(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Serialize named arrays (stored as float32) in dict order."""
    chunks = [_FILE_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f4")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        for dim in array.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(array.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensor_file(path: str | Path) -> dict[str, np.ndarray]:
    """Read a tensor container; values come back as float64 arrays."""
    blob = Path(path).read_bytes()
    if len(blob) < _FILE_HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, count = _FILE_HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = _FILE_HEADER.size
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = _U32.unpack_from(blob, offset)
            offset += _U32.size
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = _U32.unpack_from(blob, offset)
            offset += _U32.size
            shape = []
            for _ in range(ndim):
                (dim,) = _U32.unpack_from(blob, offset)
                offset += _U32.size
                shape.append(dim)
            size = int(np.prod(shape)) if shape else 1
            payload = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated tensor table") from exc
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = payload.astype(np.float64).reshape(shape)
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors


def save_checkpoint(
    directory: str | Path, tensors: dict[str, np.ndarray], meta: dict
) -> None:
    """Write ``weights.bin`` and ``checkpoint.json`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor_file(directory / "weights.bin", tensors)
    meta = {"format": "rewardflow-checkpoint", "version": VERSION, **meta}
    blob = json.dumps(meta, sort_keys=True, indent=1)
    (directory / "checkpoint.json").write_text(blob + "\n", encoding="utf-8")


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (tensors, meta) from a checkpoint directory."""
    directory = Path(directory)
    weights = directory / "weights.bin"
    sidecar = directory / "checkpoint.json"
    if not weights.exists() or not sidecar.exists():
        raise CheckpointError(f"no checkpoint under {directory}")
    tensors = read_tensor_file(weights)
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if meta.get("format") != "rewardflow-checkpoint":
        raise CheckpointError(f"{sidecar}: unrecognized sidecar format")
    return tensors, meta
