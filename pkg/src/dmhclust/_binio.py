"""Little-endian binary helpers shared by the DMHF/DMHP/DMHS/DMHT file formats."""

import struct

import numpy as np

from .errors import DataError

VERSION = 1
_F64 = np.dtype("<f8")


class Writer:
    def __init__(self, magic: bytes):
        self.parts = [magic, struct.pack("<H", VERSION)]

    def u32(self, value: int):
        self.parts.append(struct.pack("<I", int(value)))

    def f64(self, values):
        arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64).ravel())
        self.parts.append(arr.astype(_F64, copy=False).tobytes())

    def raw(self, data: bytes):
        self.parts.append(data)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes, magic: bytes, what: str = "file"):
        self.data = data
        self.what = what
        if data[:4] != magic:
            raise DataError(f"{what}: bad magic {data[:4]!r}, expected {magic!r}")
        self.pos = 4
        (version,) = self._unpack("<H", 2)
        if version != VERSION:
            raise DataError(f"{what}: unsupported version {version}")

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.what}: truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def _unpack(self, fmt, n):
        return struct.unpack(fmt, self._take(n))

    def u32(self) -> int:
        return self._unpack("<I", 4)[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * count), dtype=_F64).astype(np.float64)

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def finish(self):
        if self.pos != len(self.data):
            raise DataError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")
