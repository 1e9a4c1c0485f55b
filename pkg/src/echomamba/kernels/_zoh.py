"""Zero-order-hold input coefficient (exp(dt*a) - 1) / a and its partials.

Vectorized forms used by the numpy scan backend and the materialized
``discretize`` op; ``SERIES_EPS`` switches to a Taylor branch near the
a -> 0 limit where the quotient loses precision.  The numba backend carries
its own scalar versions in ``_scan_numba``.
"""
import numpy as np

SERIES_EPS = 1e-6
DERIV_SERIES_EPS = 1e-4


def zoh_coef(dt, a):
    z = dt * a
    small = np.abs(z) < SERIES_EPS
    safe_a = np.where(small, 1.0, a)
    exact = np.expm1(z) / safe_a
    series = dt * (1.0 + z * (0.5 + z / 6.0))
    return np.where(small, series, exact)


def zoh_coef_grads(dt, a):
    """Partials of the coefficient with respect to ``dt`` and ``a``."""
    z = dt * a
    d_dt = np.exp(z)
    small = np.abs(z) < DERIV_SERIES_EPS
    safe_a = np.where(small, 1.0, a)
    exact = (z * np.exp(z) - np.expm1(z)) / (safe_a * safe_a)
    series = dt * dt * (0.5 + z * (1.0 / 3.0 + z * (0.125 + z / 30.0)))
    return d_dt, np.where(small, series, exact)
