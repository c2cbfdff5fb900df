"""Binary containers: FFCSPEC1, FFCTENS1, FFCIMP01, IDX, plus PGM export.

All native containers are little-endian; IDX is big-endian by definition.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

SPEC_MAGIC = b"FFCSPEC1"
TENS_MAGIC = b"FFCTENS1"
IMP_MAGIC = b"FFCIMP01"

DOMAIN_CODES = {"fourier": 0, "spatial": 1}
DOMAIN_NAMES = {v: k for k, v in DOMAIN_CODES.items()}

# IDX type byte -> big-endian numpy dtype
IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in IDX_TYPES.items()}
MAX_ELEMENTS = 1 << 31


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, source):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, count: int) -> bytes:
        if count < 0 or self.pos + count > len(self.data):
            raise DataError(
                f"{self.source}: truncated payload (need {count} bytes at offset "
                f"{self.pos}, file has {len(self.data)})"
            )
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32s(self, count: int) -> tuple:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected))
        if got != expected:
            raise DataError(f"{self.source}: bad magic {got!r}, expected {expected!r}")

    def end(self) -> None:
        if self.pos != len(self.data):
            raise DataError(f"{self.source}: {len(self.data) - self.pos} trailing bytes")


def _count(dims, source) -> int:
    total = 1
    for d in dims:
        total *= int(d)
        if total > MAX_ELEMENTS:
            raise DataError(f"{source}: dimensions {tuple(dims)} overflow element limit")
    return total


def _f64(reader: _Reader, count: int) -> np.ndarray:
    return np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)


# -- FFCTENS1 ---------------------------------------------------------------

def tensor_bytes(values) -> bytes:
    values = np.ascontiguousarray(values, dtype=np.float64)
    head = TENS_MAGIC + struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape)
    return head + values.astype("<f8").tobytes()


def save_tensor(path, values) -> None:
    _atomic_write(path, tensor_bytes(values))


def load_tensor_file(path) -> np.ndarray:
    reader = _Reader(Path(path).read_bytes(), path)
    reader.magic(TENS_MAGIC)
    (rank,) = reader.u32s(1)
    dims = reader.u32s(rank)
    if any(d == 0 for d in dims):
        raise DataError(f"{path}: zero-length dimension in {dims}")
    values = _f64(reader, _count(dims, path)).reshape(dims)
    reader.end()
    return values


# -- FFCSPEC1 ---------------------------------------------------------------

def spectrum_bytes(spectrum) -> bytes:
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if spectrum.ndim == 2:
        spectrum = spectrum[None]
    c, m, n = spectrum.shape
    head = SPEC_MAGIC + struct.pack("<3I", m, n, c)
    return head + np.ascontiguousarray(spectrum).astype("<c16").tobytes()


def save_spectrum(path, spectrum) -> None:
    _atomic_write(path, spectrum_bytes(spectrum))


def load_spectrum(path) -> np.ndarray:
    """Returns a (C, m, n) complex array."""
    reader = _Reader(Path(path).read_bytes(), path)
    reader.magic(SPEC_MAGIC)
    m, n, c = reader.u32s(3)
    count = _count((c, m, n, 2), path)
    pairs = _f64(reader, count).reshape(c, m, n, 2)
    reader.end()
    return pairs[..., 0] + 1j * pairs[..., 1]


# -- FFCIMP01 ---------------------------------------------------------------

def importance_bytes(domain: str, scores) -> bytes:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise DataError(f"importance scores must be (C, H, W), got {scores.shape}")
    head = IMP_MAGIC + struct.pack("<B3I", DOMAIN_CODES[domain], *scores.shape)
    return head + scores.astype("<f8").tobytes()


def save_importance(path, domain: str, scores) -> None:
    _atomic_write(path, importance_bytes(domain, scores))


def load_importance(path) -> tuple[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes(), path)
    reader.magic(IMP_MAGIC)
    (code,) = struct.unpack("<B", reader.take(1))
    if code not in DOMAIN_NAMES:
        raise DataError(f"{path}: unknown domain tag {code}")
    dims = reader.u32s(3)
    scores = _f64(reader, _count(dims, path)).reshape(dims)
    reader.end()
    if not np.all(np.isfinite(scores)):
        raise DataError(f"{path}: non-finite importance scores")
    return DOMAIN_NAMES[code], scores


# -- IDX --------------------------------------------------------------------

def read_idx(path) -> np.ndarray:
    """Parse an IDX file into a native-endian array of its stored dtype."""
    data = Path(path).read_bytes()
    reader = _Reader(data, path)
    zero, zero2, code, ndim = struct.unpack(">BBBB", reader.take(4))
    if zero or zero2 or code not in IDX_TYPES or ndim == 0:
        raise DataError(f"{path}: bad IDX magic {data[:4].hex()}")
    dims = struct.unpack(f">{ndim}I", reader.take(4 * ndim))
    dtype = IDX_TYPES[code]
    count = _count(dims, path)
    values = np.frombuffer(reader.take(count * dtype.itemsize), dtype=dtype)
    reader.end()
    return values.reshape(dims).astype(dtype.newbyteorder("="))


def idx_bytes(values) -> bytes:
    values = np.asarray(values)
    code = IDX_CODES.get(values.dtype.newbyteorder("="))
    if code is None:
        raise DataError(f"dtype {values.dtype} has no IDX encoding")
    head = struct.pack(">BBBB", 0, 0, code, values.ndim)
    head += struct.pack(f">{values.ndim}I", *values.shape)
    return head + np.ascontiguousarray(values).astype(IDX_TYPES[code]).tobytes()


def write_idx(path, values) -> None:
    _atomic_write(path, idx_bytes(values))


# -- PGM --------------------------------------------------------------------

def pgm_bytes(grid) -> bytes:
    """8-bit binary PGM, min-max scaled; a constant grid renders mid-grey."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo > 0:
        pixels = np.rint((grid - lo) / (hi - lo) * 255.0)
    else:
        pixels = np.full(grid.shape, 128.0)
    h, w = grid.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def save_pgm(path, grid) -> None:
    _atomic_write(path, pgm_bytes(grid))
