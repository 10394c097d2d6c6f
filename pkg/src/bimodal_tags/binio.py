"""Little-endian float64 containers for matrices and checkpoints.

Every file starts with an ASCII magic string; readers reject anything else.
Integers are little-endian uint64, reals little-endian float64.
"""

import struct

import numpy as np

from .errors import FormatError

F64 = np.dtype("<f8")


class Writer:
    def __init__(self, fh):
        self.fh = fh

    def magic(self, tag: bytes):
        self.fh.write(tag)

    def uint(self, *values):
        self.fh.write(struct.pack(f"<{len(values)}Q", *values))

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.uint(len(raw))
        self.fh.write(raw)

    def reals(self, arr):
        self.fh.write(np.ascontiguousarray(arr, dtype=F64).tobytes())


class Reader:
    def __init__(self, fh, name="<stream>"):
        self.fh = fh
        self.name = name

    def _read(self, n):
        data = self.fh.read(n)
        if len(data) != n:
            raise FormatError(f"{self.name}: truncated file")
        return data

    def magic(self, tag: bytes):
        got = self.fh.read(len(tag))
        if got != tag:
            raise FormatError(f"{self.name}: bad magic {got!r}, expected {tag!r}")

    def uint(self, count=1):
        vals = struct.unpack(f"<{count}Q", self._read(8 * count))
        return vals[0] if count == 1 else vals

    def text(self):
        return self._read(self.uint()).decode("utf-8")

    def reals(self, *shape):
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self._read(8 * n), dtype=F64).astype(np.float64).reshape(shape)

    def expect_end(self):
        if self.fh.read(1):
            raise FormatError(f"{self.name}: trailing bytes")


MAT_MAGIC = b"MATv1"


def save_matrix(path, m):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "wb") as fh:
        w = Writer(fh)
        w.magic(MAT_MAGIC)
        w.uint(*m.shape)
        w.reals(m)


def load_matrix(path):
    with open(path, "rb") as fh:
        r = Reader(fh, str(path))
        r.magic(MAT_MAGIC)
        rows, cols = r.uint(2)
        m = r.reals(rows, cols)
        r.expect_end()
    return m
