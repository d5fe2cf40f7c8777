"""Binary weight container: read, write, and validate named f32 tensors.

Layout (all little-endian):

    magic "VITW" | version u32 | tensor_count u32
    per tensor, sorted by name:
        name_len u32 | name utf-8 | rank u8 | dims u64[rank] | data f32[...]
    crc32 u32 over every preceding byte

The same container carries full encoder weight sets, head-only overlay
checkpoints, and golden activation bundles; nothing here interprets the
names beyond uniqueness.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

__all__ = [
    "WeightFormatError",
    "MAGIC",
    "VERSION",
    "save_weights",
    "load_weights",
    "stored_crc32",
    "param_count",
]

MAGIC = b"VITW"
VERSION = 1

WeightSet = Dict[str, np.ndarray]


class WeightFormatError(ValueError):
    """Raised for any structural defect in a weight file."""


def param_count(weights: Mapping[str, np.ndarray]) -> int:
    """Total number of scalar parameters across all tensors."""
    return int(sum(int(np.prod(t.shape, dtype=np.int64)) for t in weights.values()))


def _atomic_write(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-weights-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(weights: Mapping[str, np.ndarray], path: str) -> None:
    """Serialize tensors in name-sorted order; byte-deterministic."""
    names = sorted(weights.keys())
    parts = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        arr = np.ascontiguousarray(weights[name], dtype=np.float32)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    body = b"".join(parts)
    _atomic_write(path, body + struct.pack("<I", zlib.crc32(body)))


class _Cursor:
    def __init__(self, buf: bytes, limit: int):
        self.buf = buf
        self.pos = 0
        self.limit = limit

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > self.limit:
            raise WeightFormatError(
                f"truncated weight file: need {n} bytes for {what} at offset "
                f"{self.pos}, only {self.limit - self.pos} available"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def load_weights(
    path: str, required: Optional[Mapping[str, Tuple[int, ...]]] = None
) -> WeightSet:
    """Load and validate a weight file.

    When `required` maps tensor names to shapes, every entry must be
    present with exactly that shape; extra tensors are still returned.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise WeightFormatError(f"file too short to be a weight file: {path}")
    body, (crc_stored,) = raw[:-4], struct.unpack("<I", raw[-4:])
    crc_actual = zlib.crc32(body)
    if crc_actual != crc_stored:
        raise WeightFormatError(
            f"CRC mismatch in {path}: stored {crc_stored:#010x}, "
            f"computed {crc_actual:#010x}"
        )
    cur = _Cursor(raw, len(body))
    if cur.take(4, "magic") != MAGIC:
        raise WeightFormatError(f"bad magic in {path}: expected {MAGIC!r}")
    (version,) = struct.unpack("<I", cur.take(4, "version"))
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    (count,) = struct.unpack("<I", cur.take(4, "tensor count"))

    out: WeightSet = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", cur.take(4, "name length"))
        name = cur.take(name_len, "name").decode("utf-8")
        if name in out:
            raise WeightFormatError(f"duplicate tensor name {name!r} in {path}")
        (rank,) = struct.unpack("<B", cur.take(1, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}Q", cur.take(8 * rank, f"dims of {name!r}"))
        n_values = 1
        for d in dims:
            n_values *= d
        data = cur.take(4 * n_values, f"data of {name!r}")
        out[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    if cur.pos != len(body):
        raise WeightFormatError(
            f"{len(body) - cur.pos} trailing bytes after declared tensors in {path}"
        )

    if required is not None:
        for name, shape in required.items():
            if name not in out:
                raise WeightFormatError(f"missing tensor {name!r} in {path}")
            if tuple(out[name].shape) != tuple(shape):
                raise WeightFormatError(
                    f"shape mismatch for {name!r} in {path}: "
                    f"expected {tuple(shape)}, found {tuple(out[name].shape)}"
                )
    return out


def stored_crc32(path: str) -> int:
    """The file's embedded body checksum, for reproducibility logging.

    (A CRC over the whole file would be the constant CRC residue, since
    the trailer is itself the body CRC.)
    """
    with open(path, "rb") as f:
        f.seek(-4, os.SEEK_END)
        (crc,) = struct.unpack("<I", f.read(4))
    return crc
