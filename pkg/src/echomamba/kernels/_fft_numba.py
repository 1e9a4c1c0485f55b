"""In-place iterative radix-2 FFT over the rows of a 2-D complex array."""
from numba import njit


@njit(cache=True)
def radix2_rows(a, twiddles, rev):
    rows, n = a.shape
    for r in range(rows):
        for i in range(n):
            j = rev[i]
            if j > i:
                tmp = a[r, i]
                a[r, i] = a[r, j]
                a[r, j] = tmp
        size = 2
        while size <= n:
            half = size // 2
            step = n // size
            for start in range(0, n, size):
                for k in range(half):
                    w = twiddles[k * step]
                    u = a[r, start + k]
                    v = a[r, start + k + half] * w
                    a[r, start + k] = u + v
                    a[r, start + k + half] = u - v
            size *= 2
    return a
