import numpy as np
import pytest

from echomamba import kernels

pytestmark = pytest.mark.skipif("numba" not in kernels.available(), reason="numba not installed")


def _inputs(rng, bsz=3, length=9, di=5, n=4, dtype=np.float64, dt_lo=1e-5):
    x = rng.normal(size=(bsz, length, di))
    delta = rng.uniform(dt_lo, 1.0, size=(bsz, length, di))
    a = -np.exp(rng.normal(size=(di, n)))
    b = rng.normal(size=(bsz, length, n))
    c = rng.normal(size=(bsz, length, n))
    d = rng.normal(size=di)
    dy = rng.normal(size=(bsz, length, di))
    return [v.astype(dtype) for v in (x, delta, a, b, c, d, dy)]


def _run(backend, zoh, args, save):
    x, delta, a, b, c, d, dy = args
    with kernels.use_backend(backend):
        y, saved = kernels.scan_forward(x, delta, a, b, c, d, zoh, save)
        grads = kernels.scan_backward(dy, x, delta, a, b, c, d, zoh, saved)
    return (y,) + tuple(grads)


@pytest.mark.parametrize("zoh", [True, False])
@pytest.mark.parametrize("save", [True, False])
def test_backends_agree_64bit(rng, zoh, save):
    args = _inputs(rng)
    for p, q in zip(_run("numpy", zoh, args, save), _run("numba", zoh, args, save)):
        assert np.abs(p - q).max() <= 1e-12 * max(1.0, np.abs(p).max())


@pytest.mark.parametrize("zoh", [True, False])
def test_backends_agree_32bit(rng, zoh):
    args = _inputs(rng, dtype=np.float32)
    out_np, out_nb = _run("numpy", zoh, args, True), _run("numba", zoh, args, True)
    for p, q in zip(out_np, out_nb):
        assert q.dtype == np.float32
        assert np.abs(p - q).max() <= 1e-5 * max(1.0, np.abs(p).max())


def test_tiny_steps_use_the_series_branch(rng):
    # dt*a around 1e-9: the closed form (exp(z)-1)/a would cancel badly
    args = _inputs(rng, dt_lo=1e-9)
    args[1][:] = 1e-9
    for p, q in zip(_run("numpy", True, args, True), _run("numba", True, args, True)):
        assert np.abs(p - q).max() <= 1e-10 * max(1e-300, np.abs(p).max())


def test_backend_switching():
    before = kernels.backend()
    with kernels.use_backend("numpy"):
        assert kernels.backend() == "numpy"
    assert kernels.backend() == before
    with pytest.raises(ValueError, match="unknown"):
        kernels.set_backend("cuda")
