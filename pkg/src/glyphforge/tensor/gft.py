"""GFT1 binary tensor files.

Layout: magic b"GFT1", u32 rank, rank * u32 dims (all little-endian),
then float32 values in row-major order. Bit-exact across platforms.
"""
import struct

import numpy as np

from ..errors import DataError
from .grid import Grid

MAGIC = b"GFT1"


def write_gft(path, grid):
    """Write a Grid (or array) to a GFT1 file; values are stored as float32."""
    data = grid.data if isinstance(grid, Grid) else np.asarray(grid)
    arr = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_gft(path):
    """Read a GFT1 file back into a float32 numpy array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r} at offset 0, expected {MAGIC!r}")
    if len(blob) < 8:
        raise DataError(f"{path}: truncated header at offset {len(blob)}")
    (rank,) = struct.unpack_from("<I", blob, 4)
    header_end = 8 + 4 * rank
    if len(blob) < header_end:
        raise DataError(f"{path}: truncated dims at offset {len(blob)} (need {header_end})")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(dims)) if rank else 1
    expected = header_end + 4 * count
    if len(blob) != expected:
        raise DataError(
            f"{path}: payload length {len(blob) - header_end} bytes at offset {header_end}, "
            f"expected {4 * count}"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=header_end, count=count)
    return values.reshape(dims).copy()
