"""Binary PGM (P5) images, 8-bit, for all emitted grayscale artifacts."""
import numpy as np

from .errors import DataError

MAXVAL = 255


def write_pgm(path, arr):
    """Write a float [H,W] array in [0,1] as an 8-bit binary PGM."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"PGM writer needs a 2D array, got shape {a.shape}")
    q = np.clip(np.rint(a * MAXVAL), 0, MAXVAL).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n{MAXVAL}\n".encode())
        fh.write(q.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM into a float32 [H,W] array in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(blob):
            if blob[pos : pos + 1].isspace():
                pos += 1
            elif blob[pos : pos + 1] == b"#":  # comment to end of line
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header at offset {start}")
        return blob[start:pos]

    magic = token()
    if magic != b"P5":
        raise DataError(f"{path}: bad magic {magic!r} at offset 0, expected b'P5'")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric header near offset {pos}: {exc}")
    if maxval != MAXVAL:
        raise DataError(f"{path}: unsupported maxval {maxval} (writer emits {MAXVAL})")
    pos += 1  # single whitespace after maxval
    need = w * h
    data = blob[pos : pos + need]
    if len(data) != need:
        raise DataError(
            f"{path}: truncated pixel data at offset {pos + len(data)} (need {need} bytes)"
        )
    return (np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float32)) / MAXVAL
