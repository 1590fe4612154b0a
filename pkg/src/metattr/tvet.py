"""TVET binary tensor files.

Layout: ``b"TVET"``, u8 version (1), u8 dtype (1 = f32), u8 rank, u8 pad (0),
``rank`` little-endian u64 dims, then the row-major little-endian f32 payload.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TVET"
VERSION = 1
DTYPE_F32 = 1


class TVETError(ValueError):
    pass


def encode(array):
    arr = np.asarray(array, dtype="<f4")
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    if arr.ndim > 255:
        raise TVETError("rank above 255")
    header = MAGIC + struct.pack("<BBBB", VERSION, DTYPE_F32, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def decode(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise TVETError("bad magic")
    version, dtype, rank, pad = struct.unpack_from("<BBBB", buf, 4)
    if version != VERSION or dtype != DTYPE_F32 or pad != 0:
        raise TVETError(f"unsupported header version={version} dtype={dtype} pad={pad}")
    offset = 8 + 8 * rank
    if len(buf) < offset:
        raise TVETError("truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - offset != 4 * count:
        raise TVETError(f"payload is {len(buf) - offset} bytes, dims {dims} need {4 * count}")
    return np.frombuffer(buf, dtype="<f4", offset=offset).reshape(dims).astype(np.float32)


def save(path, array):
    """Write ``array`` and return the sha256 hex digest of the file bytes."""
    blob = encode(array)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path, sha256=None):
    blob = Path(path).read_bytes()
    if sha256 is not None and hashlib.sha256(blob).hexdigest() != sha256:
        raise TVETError(f"sha256 mismatch for {path}")
    return decode(blob)
