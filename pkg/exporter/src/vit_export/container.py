"""Writer/reader for the binary weight container shared with the classifier.

Independent implementation of the wire format (little-endian):

    "VITW" | version u32 | tensor_count u32
    per tensor, sorted by name:
        name_len u32 | name utf-8 | rank u8 | dims u64[rank] | data f32[...]
    crc32 u32 over every preceding byte
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from typing import Dict, Mapping

import numpy as np

MAGIC = b"VITW"
VERSION = 1


def write_container(tensors: Mapping[str, np.ndarray], path: str) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    body = b"".join(parts)
    payload = body + struct.pack("<I", zlib.crc32(body))
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-export-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path: str) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError(f"CRC mismatch in {path}")
    if body[:4] != MAGIC:
        raise ValueError(f"bad magic in {path}")
    version, count = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    pos = 12
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", body[pos : pos + 4])
        pos += 4
        name = body[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rank = body[pos]
        pos += 1
        dims = struct.unpack(f"<{rank}Q", body[pos : pos + 8 * rank])
        pos += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        out[name] = (
            np.frombuffer(body[pos : pos + 4 * n], dtype="<f4").reshape(dims).copy()
        )
        pos += 4 * n
    if pos != len(body):
        raise ValueError(f"trailing bytes in {path}")
    return out


def param_count(tensors: Mapping[str, np.ndarray]) -> int:
    return int(sum(int(np.prod(t.shape, dtype=np.int64)) for t in tensors.values()))
