"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``ECHOMAMBA_BACKEND``
(``numba`` or ``numpy``); numba is the default when it imports cleanly.
:func:`use_backend` switches at runtime for tests and benchmarks.
"""
from __future__ import annotations

import contextlib
import os
import warnings

from types import SimpleNamespace

from . import _fft_numpy, _scan_numpy

__all__ = ["backend", "set_backend", "use_backend", "scan_forward", "scan_backward",
           "radix2_rows", "available"]

_BACKENDS = {"numpy": SimpleNamespace(scan=_scan_numpy, fft=_fft_numpy)}
try:
    from . import _fft_numba, _scan_numba
except Exception as exc:  # pragma: no cover - depends on environment
    warnings.warn(f"numba backend unavailable, using numpy: {exc}")
else:
    _BACKENDS["numba"] = SimpleNamespace(scan=_scan_numba, fft=_fft_numba)

_active = {"name": None}


def available() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}")
    _active["name"] = name


def backend() -> str:
    return _active["name"]


@contextlib.contextmanager
def use_backend(name: str):
    old = _active["name"]
    set_backend(name)
    try:
        yield
    finally:
        _active["name"] = old


def scan_forward(x, delta, a, b, c, d_skip, zoh=True, save_states=True):
    """Fused discretize-and-scan; returns ``(y, states or None)``."""
    return _BACKENDS[_active["name"]].scan.scan_forward(x, delta, a, b, c, d_skip, zoh, save_states)


def scan_backward(dy, x, delta, a, b, c, d_skip, zoh=True, states=None):
    return _BACKENDS[_active["name"]].scan.scan_backward(dy, x, delta, a, b, c, d_skip, zoh, states)


def radix2_rows(a, twiddles, rev):
    """Unnormalized radix-2 FFT of each row of a contiguous complex [rows, n] array.

    The numba path works in place; always use the returned array.
    """
    return _BACKENDS[_active["name"]].fft.radix2_rows(a, twiddles, rev)


_default = os.environ.get("ECHOMAMBA_BACKEND", "numba" if "numba" in _BACKENDS else "numpy").lower()
set_backend(_default if _default in _BACKENDS else "numpy")
