"""Radix-2 FFT vectorized across rows, one numpy pass per butterfly stage."""
import numpy as np


def radix2_rows(a, twiddles, rev):
    rows, n = a.shape
    a = a[:, rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = twiddles[:: n // size]
        a = a.reshape(rows, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return a.reshape(rows, n)
