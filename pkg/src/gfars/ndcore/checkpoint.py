"""Binary checkpoint format for named tensors.

Layout (all integers little-endian)::

    b"GFRS" | u32 version | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 dtype (0=f32, 1=f64)
               | u8 rank | u64 dims[rank] | raw data
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .tensor import ModelParams

MAGIC = b"GFRS"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or malformed header fields."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def encode_checkpoint(params: ModelParams, dtype: str = "f64") -> bytes:
    if dtype not in ("f64", "f32"):
        raise ValueError(f"dtype must be 'f64' or 'f32', got {dtype!r}")
    np_dtype = np.dtype("<f8") if dtype == "f64" else np.dtype("<f4")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, tensor in params.items():
        raw_name = name.encode("utf-8")
        data = np.asarray(tensor.data, dtype=np_dtype, order="C")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", _CODES[np_dtype], data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> ModelParams:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic bytes)")
    if len(blob) < 16:
        raise CheckpointTruncatedError("file ends inside the header")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {FORMAT_VERSION}")

    pos = 12
    entries = []

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointTruncatedError(f"file ends at byte {len(body)}, needed {pos + n}")
        out = body[pos:pos + n]
        pos += n
        return out

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointFormatError(f"entry {name!r}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        dt = _DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims)
        entries.append((name, data.astype(np.float64)))
    if pos != len(body):
        raise CheckpointFormatError(f"{len(body) - pos} trailing bytes after the last entry")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointChecksumError("CRC32 mismatch")
    return ModelParams(entries, version=version)


def save_checkpoint(params: ModelParams, path, dtype: str = "f64") -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(params, dtype))
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    return decode_checkpoint(Path(path).read_bytes())
