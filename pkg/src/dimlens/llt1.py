"""LLT1 binary tensor format.

Layout: magic bytes ``LLT1``, u32 little-endian rank, rank x u64 little-endian
dims, then the raw little-endian float64 payload in row-major order.  Used for
all float intermediates (PSFs, subbands, checkpoints, scenes).
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LLT1"


def write_llt1(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(array.tobytes())


def read_llt1(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an LLT1 file (bad magic {raw[:4]!r})")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    offset = 8 + 8 * rank
    count = int(np.prod(dims)) if rank else 1
    expected = offset + 8 * count
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size mismatch, expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.reshape(dims).astype(np.float64)


def append_llt1(fh, array: np.ndarray) -> None:
    """Write one LLT1 record into an already-open binary stream."""
    array = np.ascontiguousarray(array, dtype="<f8")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fh.write(array.tobytes())


def read_llt1_stream(fh) -> np.ndarray:
    """Read one LLT1 record from an open binary stream; None at EOF."""
    head = fh.read(4)
    if not head:
        return None
    if head != MAGIC:
        raise ValueError(f"bad LLT1 record magic {head!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
    return data.reshape(dims).astype(np.float64)
