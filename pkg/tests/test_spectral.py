import numpy as np
import pytest

from echomamba import fft as F
from echomamba import tensor as T
from echomamba.nn import layer_norm
from echomamba.spectral import SpectralFilterLayer, irfft, rfft, spectral_filter


def circular_conv(x, kernel):
    """Direct per-channel circular convolution along axis 1: out[t] = sum_s k[s] x[t - s]."""
    bsz, length, dim = x.shape
    out = np.zeros_like(x)
    for b in range(bsz):
        for d in range(dim):
            for t in range(length):
                for s in range(length):
                    out[b, t, d] += kernel[s, d] * x[b, (t - s) % length, d]
    return out


def _layer(length, dim, rng, k=None):
    layer = SpectralFilterLayer(length, dim, 0.0, rng)
    if k is not None:
        layer.coef_real.data[:] = k.real
        layer.coef_imag.data[:] = k.imag
    return layer


@pytest.mark.parametrize("length", [4, 7, 8, 20])
def test_filter_is_circular_convolution(length, rng):
    x = rng.normal(size=(2, length, 3))
    bins = length // 2 + 1
    k = rng.normal(size=(bins, 3)) + 1j * rng.normal(size=(bins, 3))
    # a real signal's spectrum has a real DC (and Nyquist) bin
    k[0] = k[0].real
    if length % 2 == 0:
        k[-1] = k[-1].real
    kernel = F.irfft(k, length, axis=0)
    got = spectral_filter(T.Tensor(x), T.Tensor(k.real), T.Tensor(k.imag)).data
    assert np.abs(got - circular_conv(x, kernel)).max() <= 1e-9


def test_identity_filter_with_norm_off_doubles_input(rng):
    x = rng.normal(size=(2, 8, 3))
    layer = _layer(8, 3, rng, np.ones((5, 3), complex))
    layer.use_norm = False
    np.testing.assert_allclose(layer(T.Tensor(x)).data, 2 * x, atol=1e-12)


def test_zero_filter_leaves_layer_norm_of_input(rng):
    x = rng.normal(size=(2, 8, 3))
    layer = _layer(8, 3, rng, np.zeros((5, 3), complex))
    expected = layer_norm(T.Tensor(x), layer.norm.gain, layer.norm.shift).data
    np.testing.assert_allclose(layer(T.Tensor(x)).data, expected, atol=1e-12)


def test_branch_is_linear_in_input(rng):
    kr, ki = T.Tensor(rng.normal(size=(4, 2))), T.Tensor(rng.normal(size=(4, 2)))
    a, b = rng.normal(size=(3, 6, 2)), rng.normal(size=(3, 6, 2))
    f = lambda v: spectral_filter(T.Tensor(v), kr, ki).data
    np.testing.assert_allclose(f(2.0 * a - 3.0 * b), 2.0 * f(a) - 3.0 * f(b), atol=1e-12)


def test_length_mismatch_raises(rng):
    layer = _layer(8, 3, rng)
    with pytest.raises(T.ShapeError):
        layer(T.Tensor(np.zeros((1, 6, 3))))
    with pytest.raises(T.ShapeError):
        spectral_filter(T.Tensor(np.zeros((1, 6, 3))), T.Tensor(np.zeros((3, 3))),
                        T.Tensor(np.zeros((3, 3))))


def test_coefficient_init_scale():
    layer = SpectralFilterLayer(200, 64, 0.2, np.random.default_rng(0))
    assert layer.coef_real.shape == (101, 64)
    assert abs(layer.coef_real.data.std() - 0.02) < 0.002
    assert abs(layer.coef_imag.data.std() - 0.02) < 0.002


def test_dropout_only_touches_branch(rng):
    x = rng.normal(size=(2, 8, 3))
    layer = _layer(8, 3, rng, np.zeros((5, 3), complex))
    layer.dropout_rate = 0.5
    layer.use_norm = False
    # with a zero filter the branch is zero, so dropout cannot change anything
    out = layer(T.Tensor(x), training=True, rng=np.random.default_rng(0)).data
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_complex_tensor_wrappers(rng):
    x = rng.normal(size=(2, 10, 3))
    z = rfft(T.Tensor(x))
    assert z.shape == (2, 6, 3)
    np.testing.assert_allclose(irfft(z, 10).data, x, atol=1e-12)
