"""Flat binary checkpoint container.

Byte layout (all integers little-endian):

    magic      8 bytes   b"SCLCKPT1"
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON; always carries format_version,
               model_kind, task_index and seed, plus caller extras
    count      uint32    number of named arrays
    entry * count:
        name_len  uint16
        name      name_len bytes UTF-8
        ndim      uint8
        dims      ndim * uint32
        values    prod(dims) float64 little-endian raw bytes
    crc        uint32    CRC-32 of everything after the magic

Round trips are bit-exact; a CRC mismatch or truncation raises
``CheckpointError`` naming the file.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SCLCKPT1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict):
    meta = dict(metadata)
    meta.setdefault("format_version", FORMAT_VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    body = bytearray()
    body += struct.pack("<I", len(meta_bytes))
    body += meta_bytes
    body += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() serializes C-order
        name_bytes = name.encode("utf-8")
        body += struct.pack("<H", len(name_bytes))
        body += name_bytes
        body += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            body += struct.pack("<I", extent)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", crc))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    body, (crc,) = raw[len(MAGIC):-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"corrupted checkpoint (CRC mismatch): {path}")

    view = memoryview(body)
    offset = 0

    def take(n):
        nonlocal offset
        if offset + n > len(view):
            raise CheckpointError(f"truncated checkpoint: {path}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    metadata = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        n_values = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(n_values * 8), dtype="<f8").reshape(dims)
        arrays[name] = data.astype(np.float64).copy()
    if offset != len(view):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return arrays, metadata
