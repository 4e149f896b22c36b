"""PSTB: a little binary container for named float64 tensors.

Layout (all integers little-endian):

    magic   6 bytes  b"PSTB1\\0"
    count   u64
    entry   repeated count times:
        name_len  u32   (>= 1)
        name      UTF-8 bytes
        dtype     u8    (1 = float64)
        rank      u8
        extents   rank x u64
        payload   prod(extents) x 8 bytes, little-endian float64

Round trips are lossless. Reading validates the magic, every declared
size against the remaining bytes, and the dtype code, with a distinct
error type per failure class.
"""

import struct

import numpy as np

MAGIC = b"PSTB1\x00"
DTYPE_F64 = 1


class PstbError(Exception):
    """Base class for container format errors."""


class PstbHeaderError(PstbError):
    """Bad magic or malformed entry header."""


class PstbTruncatedError(PstbError):
    """Declared sizes exceed the bytes actually present."""


class PstbDtypeError(PstbError):
    """Unknown dtype code."""


def write_pstb(path, tensors) -> None:
    """Write named tensors; `tensors` is a mapping or (name, array) pairs."""
    items = list(tensors.items()) if hasattr(tensors, "items") else list(tensors)
    chunks = [MAGIC, struct.pack("<Q", len(items))]
    for name, arr in items:
        if not name:
            raise PstbHeaderError("tensor names must be non-empty")
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")  # tobytes() emits C order regardless
        if arr.ndim > 8:
            raise PstbHeaderError(f"{name}: rank {arr.ndim} exceeds the format limit")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", DTYPE_F64, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise OSError(f"failed writing container {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise PstbTruncatedError(
                f"truncated container: needed {n} bytes for {what}, "
                f"{len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def read_pstb(path) -> dict:
    """Read a container back into an ordered name -> ndarray dict."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise PstbHeaderError(f"{path}: bad magic, not a PSTB container")
    (count,) = struct.unpack("<Q", r.take(8, "entry count"))
    out = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", r.take(4, f"entry {i} name length"))
        if name_len == 0:
            raise PstbHeaderError(f"entry {i}: zero-length name")
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        dtype, rank = struct.unpack("<BB", r.take(2, f"{name}: dtype/rank"))
        if dtype != DTYPE_F64:
            raise PstbDtypeError(f"{name}: unknown dtype code {dtype}")
        if rank > 8:
            raise PstbHeaderError(f"{name}: rank {rank} exceeds the format limit")
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"{name}: extents"))
        n_elem = 1
        for s in shape:
            n_elem *= s
        payload = r.take(8 * n_elem, f"{name}: payload")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if r.pos != len(buf):
        raise PstbHeaderError(f"{path}: {len(buf) - r.pos} trailing bytes after last entry")
    return out
