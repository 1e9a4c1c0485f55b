import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echomamba import kernels
from echomamba import tensor as T
from echomamba.gradcheck import check_gradients
from echomamba.ssm import (EchoMambaLayer, MambaBlock, discretize, reverse_valid,
                           reverse_valid_tensor, selective_scan, selective_scan_fused)


def _sequential_oracle(x, a_bar, b_bar, c, d_skip):
    """Plain per-lane loop of h_t = a_t h_{t-1} + b_t x_t, y_t = <c_t, h_t> + d x_t."""
    bsz, length, di = x.shape
    n = c.shape[-1]
    y = np.zeros_like(x)
    for b in range(bsz):
        for d in range(di):
            h = np.zeros(n)
            for t in range(length):
                h = a_bar[b, t, d] * h + b_bar[b, t, d] * x[b, t, d]
                y[b, t, d] = h @ c[b, t] + d_skip[d] * x[b, t, d]
    return y


def _scan_args(rng, bsz=2, length=32, di=3, n=4):
    return (rng.normal(size=(bsz, length, di)), rng.uniform(0.05, 0.999, size=(bsz, length, di, n)),
            rng.normal(size=(bsz, length, di, n)), rng.normal(size=(bsz, length, n)),
            rng.normal(size=di))


class TestDiscretize:
    def test_vanishing_step(self, rng):
        b = rng.normal(size=(1, 2, 3))
        a_bar, b_bar = discretize(T.Tensor(np.zeros((2, 3))), T.Tensor(np.full((1, 2, 2), 1e-12)),
                                  T.Tensor(b))
        assert np.abs(a_bar.data - 1.0).max() <= 1e-9
        assert np.abs(b_bar.data).max() <= 1e-9

    def test_closed_form_ln2(self, rng):
        b = rng.normal(size=(1, 1, 2))
        a_bar, b_bar = discretize(T.Tensor(np.zeros((1, 2))), T.Tensor(np.full((1, 1, 1), math.log(2))),
                                  T.Tensor(b))
        np.testing.assert_allclose(a_bar.data, 0.5, atol=1e-15)
        np.testing.assert_allclose(b_bar.data[0, 0, 0], 0.5 * b[0, 0], atol=1e-15)

    def test_euler_is_delta_times_b(self, rng):
        delta, b = rng.uniform(0.01, 1.0, size=(2, 3, 4)), rng.normal(size=(2, 3, 2))
        _, b_bar = discretize(T.Tensor(rng.normal(size=(4, 2))), T.Tensor(delta), T.Tensor(b), "euler")
        np.testing.assert_array_equal(b_bar.data, delta[..., None] * b[:, :, None, :])

    def test_zoh_and_euler_converge_quadratically(self, rng):
        a_log, b = T.Tensor(rng.normal(size=(3, 2))), T.Tensor(rng.normal(size=(1, 1, 2)))
        errs = []
        for dt in (1e-2, 1e-3):
            delta = T.Tensor(np.full((1, 1, 3), dt))
            zoh = discretize(a_log, delta, b, "zoh")[1].data
            euler = discretize(a_log, delta, b, "euler")[1].data
            errs.append(np.abs(zoh - euler).max())
        assert 80 < errs[0] / errs[1] < 120

    def test_a_bar_in_open_unit_interval(self, rng):
        a_log = T.Tensor(np.log(np.tile(np.arange(1.0, 17.0), (5, 1))))
        a_bar, _ = discretize(a_log, T.Tensor(rng.uniform(1e-3, 0.1, size=(2, 4, 5))),
                              T.Tensor(rng.normal(size=(2, 4, 16))))
        assert ((a_bar.data > 0) & (a_bar.data < 1)).all()

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            discretize(T.Tensor(np.zeros((1, 1))), T.Tensor(np.zeros((1, 1, 1))),
                       T.Tensor(np.zeros((1, 1, 1))))

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="discretization"):
            discretize(T.Tensor(np.zeros((1, 1))), T.Tensor(np.ones((1, 1, 1))),
                       T.Tensor(np.zeros((1, 1, 1))), "bilinear")


class TestScan:
    def test_memoryless_when_a_bar_zero(self, rng):
        x, _, b_bar, c, d = _scan_args(rng, length=5)
        a_bar = np.zeros_like(b_bar)
        y = selective_scan(*(T.Tensor(v) for v in (x, a_bar, b_bar, c, d))).data
        expected = np.einsum("btdn,btn->btd", b_bar, c) * x + d * x
        np.testing.assert_allclose(y, expected, atol=1e-12)

    def test_integrator(self):
        ones = np.ones((1, 3, 1, 1))
        y = selective_scan(T.Tensor(np.ones((1, 3, 1))), T.Tensor(ones), T.Tensor(ones),
                           T.Tensor(np.ones((1, 3, 1))), T.Tensor(np.zeros(1)))
        np.testing.assert_array_equal(y.data.ravel(), [1.0, 2.0, 3.0])

    @pytest.mark.parametrize("method", ["sequential", "blocked"])
    def test_matches_loop_oracle(self, rng, method):
        args = _scan_args(rng)
        y = selective_scan(*(T.Tensor(v) for v in args), method=method, block=8).data
        assert np.abs(y - _sequential_oracle(*args)).max() <= 1e-10

    @pytest.mark.parametrize("block", [1, 5, 16, 32, 40])
    def test_blocked_equals_sequential_64(self, rng, block):
        args = [T.Tensor(v) for v in _scan_args(rng)]
        seq = selective_scan(*args).data
        blk = selective_scan(*args, method="blocked", block=block).data
        assert np.abs(seq - blk).max() <= 1e-10

    def test_blocked_equals_sequential_32(self, rng):
        with T.precision(32):
            args = [T.Tensor(v) for v in _scan_args(rng)]
            seq = selective_scan(*args).data
            blk = selective_scan(*args, method="blocked", block=8).data
        assert seq.dtype == np.float32
        assert np.abs(seq - blk).max() <= 1e-5

    @pytest.mark.parametrize("mode", ["zoh", "euler"])
    @pytest.mark.parametrize("backend", kernels.available())
    def test_fused_matches_materialized(self, rng, mode, backend):
        bsz, length, di, n = 2, 7, 3, 4
        x, c = rng.normal(size=(bsz, length, di)), rng.normal(size=(bsz, length, n))
        delta, b = rng.uniform(0.01, 2.0, size=(bsz, length, di)), rng.normal(size=(bsz, length, n))
        a_log, d = rng.normal(size=(di, n)), rng.normal(size=di)
        a_bar, b_bar = discretize(T.Tensor(a_log), T.Tensor(delta), T.Tensor(b), mode)
        ref = selective_scan(T.Tensor(x), a_bar, b_bar, T.Tensor(c), T.Tensor(d)).data
        with kernels.use_backend(backend):
            got = selective_scan_fused(*(T.Tensor(v) for v in (x, delta, a_log, b, c, d)), mode).data
        assert np.abs(got - ref).max() <= 1e-12

    def test_shape_mismatch(self, rng):
        x, a_bar, b_bar, c, d = _scan_args(rng, length=4)
        with pytest.raises(T.ShapeError):
            selective_scan(*(T.Tensor(v) for v in (x, a_bar, b_bar, c[:, :3], d)))

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError, match="method"):
            selective_scan(*(T.Tensor(v) for v in _scan_args(rng, length=3)), method="parallel")


class TestReverseValid:
    def test_example(self):
        np.testing.assert_array_equal(reverse_valid(np.array([[0, 0, 7, 8, 9]]), np.array([3])),
                                      [[0, 0, 9, 8, 7]])

    def test_length_one_unchanged(self):
        arr = np.array([[0, 0, 0, 4]])
        np.testing.assert_array_equal(reverse_valid(arr, np.array([1])), arr)

    def test_trailing_dims_follow(self, rng):
        arr = rng.normal(size=(1, 4, 2))
        out = reverse_valid(arr, np.array([2]))
        np.testing.assert_array_equal(out[0, 2], arr[0, 3])
        np.testing.assert_array_equal(out[0, :2], arr[0, :2])

    def test_length_out_of_range(self):
        with pytest.raises(ValueError):
            reverse_valid(np.zeros((1, 3)), np.array([4]))

    @given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
    def test_involution_and_padding_untouched(self, bsz, length, seed):
        rng = np.random.default_rng(seed)
        lengths = rng.integers(0, length + 1, size=bsz)
        arr = rng.normal(size=(bsz, length, 2))
        once = reverse_valid(arr, lengths)
        np.testing.assert_array_equal(reverse_valid(once, lengths), arr)
        for i, n in enumerate(lengths):
            np.testing.assert_array_equal(once[i, : length - n], arr[i, : length - n])
            np.testing.assert_array_equal(once[i, length - n:], arr[i, length - n:][::-1])

    def test_tensor_gradient_is_reversed(self, rng):
        x = T.parameter(rng.normal(size=(2, 4, 1)))
        w = rng.normal(size=(2, 4, 1))
        lengths = np.array([3, 4])
        T.backward((reverse_valid_tensor(x, lengths) * w).sum())
        np.testing.assert_array_equal(x.grad, reverse_valid(w, lengths))


class TestMambaBlock:
    def _block(self, rng, **kw):
        return MambaBlock(4, rng, d_state=2, d_conv=3, expand=2, **kw)

    def test_shapes_and_init(self, rng):
        block = MambaBlock(64, rng)
        assert block.d_inner == 128 and block.dt_rank == 8
        np.testing.assert_allclose(block.a_log.data[0], np.log(np.arange(1, 17)))
        delta0 = np.log1p(np.exp(block.delta_proj.bias.data))
        assert delta0.min() >= 1e-3 - 1e-12 and delta0.max() <= 1e-1 + 1e-12

    @pytest.mark.parametrize("combine", ["gate", "residual"])
    def test_zero_input_zero_biases(self, rng, combine):
        block = self._block(rng)
        for lin in (block.proj_in, block.conv, block.proj_bcd, block.delta_proj, block.proj_out):
            lin.bias.data[:] = 0.0
        out = block(T.Tensor(np.zeros((2, 5, 4))), combine=combine)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_causal(self, rng):
        block = self._block(rng)
        x = rng.normal(size=(1, 8, 4))
        base = block(T.Tensor(x)).data
        for t in range(8):
            xp = x.copy()
            xp[0, t] += 0.5
            diff = np.abs(block(T.Tensor(xp)).data - base).max(axis=(0, 2))
            assert (diff[:t] == 0).all() and diff[t] > 0

    def test_gradcheck(self, rng):
        block = self._block(rng)
        x = T.parameter(rng.uniform(-2, 2, size=(2, 8, 4)))
        w = rng.normal(size=(2, 8, 4))
        assert check_gradients(lambda: (block(x) * w).sum(), [x] + block.parameters()) < 1e-4

    def test_bad_combine(self, rng):
        with pytest.raises(ValueError, match="combine"):
            self._block(rng)(T.Tensor(np.zeros((1, 2, 4))), combine="sum")


class TestEchoMambaLayer:
    def _layer(self, rng, **kw):
        return EchoMambaLayer(4, rng, d_state=2, d_conv=2, expand=2, dropout_rate=0.0, **kw)

    def test_single_item_branches_agree_when_tied(self, rng):
        layer = self._layer(rng)
        layer.reverse_block, layer.norm_rev = layer.forward_block, layer.norm_fwd
        x = T.Tensor(rng.normal(size=(3, 5, 4)))
        lengths = np.ones(3, dtype=int)
        xr = reverse_valid_tensor(x, lengths)
        np.testing.assert_array_equal(xr.data, x.data)
        y_fwd = layer._add_norm(x, layer.forward_block(x), layer.norm_fwd, False, None)
        y_rev = layer._add_norm(xr, layer.reverse_block(xr), layer.norm_rev, False, None)
        np.testing.assert_array_equal(y_fwd.data, y_rev.data)

    def test_bidirectional_sees_the_future(self, rng):
        layer = self._layer(rng)
        x = rng.normal(size=(1, 6, 4))
        lengths = np.array([6])
        base = layer(T.Tensor(x), lengths).data
        xp = x.copy()
        xp[0, 4] += 0.5
        diff = np.abs(layer(T.Tensor(xp), lengths).data - base).max(axis=(0, 2))
        assert (diff[:4] > 0).all()

    def test_unidirectional_is_causal(self, rng):
        layer = self._layer(rng, bidirectional=False)
        x = rng.normal(size=(1, 6, 4))
        lengths = np.array([6])
        base = layer(T.Tensor(x), lengths).data
        xp = x.copy()
        xp[0, 4] += 0.5
        diff = np.abs(layer(T.Tensor(xp), lengths).data - base).max(axis=(0, 2))
        assert (diff[:4] == 0).all() and diff[4] > 0

    def test_unidirectional_has_no_reverse_parameters(self, rng):
        names = [n for n, _ in self._layer(rng, bidirectional=False).named_parameters()]
        assert not any(n.startswith(("reverse_block", "norm_rev", "fuse")) for n in names)

    def test_gradcheck(self, rng):
        layer = self._layer(rng)
        x = T.parameter(rng.uniform(-2, 2, size=(2, 5, 4)))
        w = rng.normal(size=(2, 5, 4))
        loss = lambda: (layer(x, np.array([5, 2])) * w).sum()
        assert check_gradients(loss, [x] + layer.parameters()) < 1e-4
