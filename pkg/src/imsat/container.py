"""Flat binary tensor container shared by checkpoints and native datasets.

Layout::

    header   16 bytes: 12-byte magic, little-endian uint32 format version
    repeated until EOF:
        uint64   name length in bytes
        bytes    UTF-8 name
        uint64   rank
        uint64   dims[rank]
        float64  values, C order

All integers and floats are little-endian.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

VERSION = 1
CHECKPOINT_MAGIC = b"IMSAT-CKPT\x00\x00"
DATASET_MAGIC = b"IMSAT-DATA\x00\x00"

_U64 = struct.Struct("<Q")


def encode_tensors(tensors, magic):
    if len(magic) != 12:
        raise ValueError("magic must be exactly 12 bytes")
    chunks = [magic, struct.pack("<I", VERSION)]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(_U64.pack(len(raw_name)))
        chunks.append(raw_name)
        chunks.append(_U64.pack(arr.ndim))
        chunks.extend(_U64.pack(n) for n in arr.shape)
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_tensors(blob, magic):
    if len(blob) < 16:
        raise DataFormatError(f"truncated header at byte offset {len(blob)}")
    if blob[:12] != magic:
        raise DataFormatError(f"bad magic {blob[:12]!r} at byte offset 0")
    (version,) = struct.unpack_from("<I", blob, 12)
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version} at byte offset 12")

    out = {}
    pos = 16

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(blob):
            raise DataFormatError(f"truncated tensor record at byte offset {pos}")
        start = pos
        pos += nbytes
        return start

    while pos < len(blob):
        (name_len,) = _U64.unpack_from(blob, take(8))
        start = take(name_len)
        try:
            name = blob[start:start + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataFormatError(f"invalid tensor name at byte offset {start}") from exc
        (rank,) = _U64.unpack_from(blob, take(8))
        if rank > 32:
            raise DataFormatError(f"implausible rank {rank} at byte offset {pos - 8}")
        dims = tuple(_U64.unpack_from(blob, take(8))[0] for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        start = take(8 * count)
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        out[name] = arr.reshape(dims).astype(np.float64)
    return out


def write_tensors(path, tensors, magic):
    Path(path).write_bytes(encode_tensors(tensors, magic))


def read_tensors(path, magic):
    return decode_tensors(Path(path).read_bytes(), magic)
