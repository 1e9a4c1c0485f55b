"""Learnable frequency-domain filter over the sequence axis."""
from __future__ import annotations

import numpy as np

from . import fft as F
from . import tensor as T
from .nn import LayerNorm, Module, dropout
from .tensor import ComplexTensor, ShapeError, Tensor, make_op

__all__ = ["SpectralFilterLayer", "spectral_filter", "rfft", "irfft"]


def rfft(x: Tensor | np.ndarray) -> ComplexTensor:
    """Half spectrum along axis 1 of a [B, L, D] signal (not differentiable)."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return ComplexTensor.from_numpy(F.rfft(data, axis=1))


def irfft(z: ComplexTensor | np.ndarray, length: int) -> Tensor:
    data = z.numpy() if isinstance(z, ComplexTensor) else np.asarray(z)
    return Tensor(F.irfft(data, length, axis=1))


def spectral_filter(x: Tensor, k_real: Tensor, k_imag: Tensor) -> Tensor:
    """irfft(K * rfft(x)) along axis 1, with K a [bins, D] complex filter.

    Equivalent to circular convolution of each channel with irfft(K).
    """
    _, length, dim = x.shape
    bins = length // 2 + 1
    if k_real.shape != (bins, dim) or k_imag.shape != (bins, dim):
        raise ShapeError(f"filter {k_real.shape} does not match sequence length {length} "
                         f"and width {dim} (need {(bins, dim)})")
    spec = F.rfft(x.data, axis=1)
    k = k_real.data + 1j * k_imag.data
    out = F.irfft(spec * k, length, axis=1)
    w = F.half_weights(length)[:, None]

    def bw(g):
        gz = F.rfft(g, axis=1) * (w / length)
        gk = (gz * np.conj(spec)).sum(axis=0)
        gx = length * F.irfft(gz * np.conj(k) / w, length, axis=1)
        return gx, gk.real, gk.imag

    return make_op(out, (x, k_real, k_imag), bw, "spectral_filter")


class SpectralFilterLayer(Module):
    """LayerNorm(x + Dropout(filtered x)) with a learnable half-spectrum filter."""

    def __init__(self, max_len: int, dim: int, dropout_rate: float, rng: np.random.Generator,
                 ln_eps: float | None = None):
        bins = max_len // 2 + 1
        self.coef_real = T.parameter(rng.normal(0.0, 0.02, size=(bins, dim)))
        self.coef_imag = T.parameter(rng.normal(0.0, 0.02, size=(bins, dim)))
        self.norm = LayerNorm(dim, ln_eps)
        self.dropout_rate = dropout_rate
        self.max_len = max_len
        self.use_norm = True

    @property
    def coefficients(self) -> ComplexTensor:
        return ComplexTensor(self.coef_real, self.coef_imag)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        if x.shape[1] != self.max_len:
            raise ShapeError(f"sequence length {x.shape[1]} != filter length {self.max_len}")
        branch = spectral_filter(x, self.coef_real, self.coef_imag)
        out = x + dropout(branch, self.dropout_rate, training, rng)
        return self.norm(out) if self.use_norm else out
