"""Exact 2D discrete Fourier transforms and component deletion.

Conventions: the forward transform is unnormalized with exponent
``exp(-2j*pi*(u*x/m + v*y/n))``; the inverse carries the ``1/(m*n)`` factor.
Arrays are ``(..., m, n)`` with the transform taken over the last two axes,
so a ``(C, m, n)`` array is a multichannel spectrum transformed per channel.
A Fourier feature is addressed by ``(channel, u, v)``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DataError, SymmetryError

SYMMETRY_ATOL = 1e-9
# imaginary residual above this (relative to the output scale) is a violation
RESIDUAL_LIMIT = 1e-6


class FeatureIndex(NamedTuple):
    channel: int
    u: int
    v: int


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    # reduce ux mod n before scaling keeps the phase argument small and exact
    return np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)


@lru_cache(maxsize=None)
def _twiddles(size: int, sign: int) -> np.ndarray:
    half = size // 2
    return np.exp(sign * 2j * np.pi * np.arange(half) / size)


def _fft_last(a: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized 1D DFT along the last axis (sign=-1 forward, +1 inverse)."""
    n = a.shape[-1]
    if not _is_pow2(n):
        return a @ _dft_matrix(n, sign)
    out = a[..., _bit_reversal(n)].astype(np.complex128)
    lead = out.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size, sign)
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return out


def _transform2(a: np.ndarray, sign: int) -> np.ndarray:
    out = _fft_last(np.asarray(a, dtype=np.complex128), sign)
    out = _fft_last(np.swapaxes(out, -1, -2), sign)
    return np.ascontiguousarray(np.swapaxes(out, -1, -2))


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise DataError(f"{what} contains {bad} non-finite value(s)")


def dft2(grid) -> np.ndarray:
    """Forward 2D DFT of a real grid (or stack of grids) over the last two axes."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim < 2:
        raise DataError(f"dft2 needs at least 2 dimensions, got shape {grid.shape}")
    _require_finite(grid, "grid")
    return _transform2(grid, -1)


def idft2_complex(spectrum) -> np.ndarray:
    """Inverse 2D DFT without discarding the imaginary part."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    m, n = spectrum.shape[-2:]
    return _transform2(spectrum, +1) / (m * n)


def idft2(spectrum) -> np.ndarray:
    """Inverse 2D DFT returning a real grid.

    Raises SymmetryError when the spectrum is not the transform of a real
    signal, i.e. the imaginary residual is not negligible.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    _require_finite(spectrum, "spectrum")
    out = idft2_complex(spectrum)
    residual = float(np.max(np.abs(out.imag), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(out.real), initial=0.0)))
    if residual >= RESIDUAL_LIMIT * scale:
        raise SymmetryError(
            f"imaginary residual {residual:.3e} after inverse transform; "
            "spectrum is not conjugate-symmetric"
        )
    return out.real.copy()


def energy(spectrum, u: int, v: int) -> float:
    """Magnitude |F(u, v)| of one component of a single-channel spectrum."""
    spectrum = np.asarray(spectrum)
    m, n = spectrum.shape[-2:]
    if not (0 <= u < m and 0 <= v < n):
        raise DataError(f"index ({u}, {v}) outside {m}x{n} spectrum")
    z = complex(spectrum[..., u, v])
    return float(np.hypot(z.real, z.imag))


def magnitude(spectrum) -> np.ndarray:
    return np.abs(np.asarray(spectrum))


def conjugate_pair(idx, dims) -> FeatureIndex:
    """Index of the component holding the complex conjugate of ``idx``."""
    c, u, v = idx
    m, n = dims[-2:]
    return FeatureIndex(c, (-u) % m, (-v) % n)


def is_self_conjugate(idx, dims) -> bool:
    return tuple(conjugate_pair(idx, dims)) == tuple(idx)


def conjugate_flat_map(shape) -> np.ndarray:
    """For a (C, m, n) layout, map every flat feature index to its conjugate's."""
    c, m, n = shape
    ch, u, v = np.meshgrid(np.arange(c), np.arange(m), np.arange(n), indexing="ij")
    return (ch * m * n + ((-u) % m) * n + ((-v) % n)).ravel()


def is_conjugate_symmetric(spectrum, atol: float = SYMMETRY_ATOL) -> bool:
    spectrum = np.asarray(spectrum)
    flipped = np.roll(np.flip(spectrum, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))
    return bool(np.all(np.abs(spectrum - np.conj(flipped)) <= atol))


def _check_bounds(features: np.ndarray, shape) -> None:
    if features.size and (
        np.any(features < 0) or np.any(features >= np.asarray(shape)[None, :])
    ):
        raise DataError(f"feature index out of bounds for spectrum shape {tuple(shape)}")


def delete_components(
    spectrum, features: Iterable, pair_conjugates: bool = True
) -> np.ndarray:
    """Zero the listed ``(channel, u, v)`` components of a (C, m, n) spectrum.

    Returns a new array; every other component is copied unchanged.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    squeeze = spectrum.ndim == 2
    out = spectrum[None].copy() if squeeze else spectrum.copy()
    idx = np.array(list(features), dtype=np.int64).reshape(-1, 3)
    if squeeze and idx.size and np.any(idx[:, 0] != 0):
        raise DataError("single-channel spectrum only has channel 0")
    _check_bounds(idx, out.shape)
    if idx.size:
        out[idx[:, 0], idx[:, 1], idx[:, 2]] = 0
        if pair_conjugates:
            m, n = out.shape[-2:]
            out[idx[:, 0], (-idx[:, 1]) % m, (-idx[:, 2]) % n] = 0
    return out[0] if squeeze else out


def delete_flat(spectrum: np.ndarray, flat: np.ndarray) -> np.ndarray:
    """Zero components addressed by flat (C*m*n) indices; no pairing is added."""
    out = np.array(spectrum, dtype=np.complex128, order="C", copy=True)
    out.reshape(-1)[np.asarray(flat, dtype=np.int64)] = 0
    return out


def centered(k: int, size: int) -> int:
    return k if k <= size // 2 else k - size


def frequency_magnitude(idx, dims) -> float:
    """Radial frequency sqrt(u'^2 + v'^2) with signed (centered) indices."""
    u, v = idx[-2:]
    m, n = dims[-2:]
    return float(np.hypot(centered(u, m), centered(v, n)))


def frequency_grid(m: int, n: int) -> np.ndarray:
    """Radial frequency magnitude for every (u, v) of an m x n spectrum."""
    u = np.arange(m)
    v = np.arange(n)
    uc = np.where(u <= m // 2, u, u - m)
    vc = np.where(v <= n // 2, v, v - n)
    return np.hypot(uc[:, None], vc[None, :]).astype(np.float64)
