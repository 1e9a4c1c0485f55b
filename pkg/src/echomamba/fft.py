"""Radix-2 / Bluestein FFT and the real-input half-spectrum transforms.

Transforms operate along one axis and are vectorized over all others.
Lengths up to ``DENSE_MAX`` multiply by a cached DFT matrix, which beats
the butterfly loops at the short sequence lengths the recommender uses.
Longer power-of-two lengths use an iterative decimation-in-time radix-2
loop; any other length goes through Bluestein's chirp-z identity on a
padded power-of-two grid.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import kernels

__all__ = ["fft", "ifft", "rfft", "irfft", "dft_naive", "half_weights", "DENSE_MAX"]

DENSE_MAX = 64


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@lru_cache(maxsize=64)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(n: int, sign: int) -> np.ndarray:
    return np.exp(sign * 2j * np.pi * np.arange(n // 2) / n)


def _radix2(x: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized transform along the last axis; len must be a power of two."""
    n = x.shape[-1]
    rows = np.array(x, dtype=np.complex128, order="C", copy=True).reshape(-1, n)
    out = kernels.radix2_rows(rows, _twiddles(n, sign), _bitrev(n))
    return out.reshape(x.shape[:-1] + (n,))


@lru_cache(maxsize=64)
def _chirp(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the phase argument small for large n
    w = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    if n > 1:
        b[m - n + 1:] = np.conj(w[1:])[::-1]
    return w, _radix2(b, -1), m


def _bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    w, bf, m = _chirp(n)
    if sign > 0:
        # inverse transform = conj(forward(conj(x)))
        return np.conj(_bluestein(np.conj(x), -1))
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * w
    conv = _radix2(_radix2(a, -1) * bf, +1) / m
    return conv[..., :n] * w


@lru_cache(maxsize=64)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    # (j*k mod n) keeps the phase argument exact for integer products
    return np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)


def _transform(x: np.ndarray, axis: int, sign: int, method: str = "auto") -> np.ndarray:
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("transform length must be >= 1")
    if method == "auto":
        method = "dense" if n <= DENSE_MAX else "radix2" if _is_pow2(n) else "bluestein"
    if method == "dense":
        out = x.astype(np.complex128) @ _dft_matrix(n, sign)
    elif method == "radix2":
        if not _is_pow2(n):
            raise ValueError(f"radix-2 needs a power-of-two length, got {n}")
        out = _radix2(x, sign)
    elif method == "bluestein":
        out = _bluestein(x, sign)
    else:
        raise ValueError(f"unknown transform method {method!r}")
    return np.moveaxis(out, -1, axis)


def fft(x: np.ndarray, axis: int = -1, method: str = "auto") -> np.ndarray:
    """Forward transform; ``method`` forces ``dense``, ``radix2`` or ``bluestein``."""
    return _transform(x, axis, -1, method)


def ifft(x: np.ndarray, axis: int = -1, method: str = "auto") -> np.ndarray:
    """Inverse transform including the 1/n factor."""
    n = np.shape(x)[axis]
    return _transform(x, axis, +1, method) / n


def rfft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Half spectrum (n//2 + 1 bins) of a real signal."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise TypeError("rfft expects real input")
    n = x.shape[axis]
    full = fft(x, axis)
    return np.take(full, np.arange(n // 2 + 1), axis=axis)


def irfft(z: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`rfft` for a length-``n`` real signal.

    Imaginary parts of the DC bin (and the Nyquist bin for even ``n``) are
    ignored, as they cannot arise from a real signal.
    """
    z = np.moveaxis(np.asarray(z), axis, -1)
    if z.shape[-1] != n // 2 + 1:
        raise ValueError(f"{z.shape[-1]} bins do not match signal length {n} (need {n // 2 + 1})")
    full = np.empty(z.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = z
    full[..., 0] = z[..., 0].real
    if n % 2 == 0:
        full[..., n // 2] = z[..., n // 2].real
    tail = n - (n // 2 + 1)
    if tail:
        full[..., n // 2 + 1:] = np.conj(z[..., 1: tail + 1][..., ::-1])
    out = ifft(full, -1).real
    return np.moveaxis(out, -1, axis)


def half_weights(n: int) -> np.ndarray:
    """Multiplicity of each half-spectrum bin in the full spectrum."""
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def dft_naive(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """O(n^2) reference transform, used only as a test oracle."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return np.moveaxis(x @ mat.T, -1, axis)
