"""
Flat binary checkpoints.

Layout (all integers little-endian):
    magic    4 bytes  b"SPLC"
    version  u32
    meta_len u32, then meta_len bytes of UTF-8 JSON (0 = no metadata)
    count    u32
    count records of:
        name_len u32, name (UTF-8), rank u32, rank x u64 dims, f64 values
"""

import json
import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from errors import CheckpointError

MAGIC = b"SPLC"
VERSION = 1


def save_checkpoint(
    path: Path, tensors: Mapping[str, np.ndarray], metadata: Optional[dict] = None
) -> Path:
    """Write named float64 arrays (and optional JSON metadata) to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8") if metadata else b""

    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta]
    chunks.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        array = np.asarray(tensors[name], dtype="<f8", order="C")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())

    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by save_checkpoint.

    Returns:
        (tensors by name, metadata dict).

    Raises:
        CheckpointError: On a bad magic, unknown version or truncation.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    metadata = json.loads(reader.take(meta_len).decode("utf-8")) if meta_len else {}

    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        n_values = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(reader.take(8 * n_values), dtype="<f8")
        tensors[name] = values.reshape(shape).astype(np.float64)
    return tensors, metadata
