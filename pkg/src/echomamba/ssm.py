"""Selective state-space block and its bidirectional wrapper.

The diagonal state matrix is stored as ``a_log`` with ``A = -exp(a_log)``,
so every ZOH step factor ``exp(delta * A)`` lies in (0, 1).
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels
from . import tensor as T
from .kernels._zoh import zoh_coef, zoh_coef_grads
from .nn import Conv1DDepthwise, GLU, LayerNorm, Linear, Module, dropout
from .tensor import ShapeError, Tensor, make_op

__all__ = [
    "discretize",
    "selective_scan",
    "selective_scan_fused",
    "reverse_valid",
    "reverse_valid_tensor",
    "MambaBlock",
    "EchoMambaLayer",
    "DISCRETIZATIONS",
]

DISCRETIZATIONS = ("zoh", "euler")


def _check_mode(mode: str) -> bool:
    if mode not in DISCRETIZATIONS:
        raise ValueError(f"discretization must be one of {DISCRETIZATIONS}, got {mode!r}")
    return mode == "zoh"


def discretize(a_log: Tensor, delta: Tensor, b: Tensor, mode: str = "zoh") -> tuple[Tensor, Tensor]:
    """Per-step transition and input factors, each shaped [B, L, Di, N].

    ``a_bar = exp(delta * A)``; ``b_bar = (exp(delta * A) - 1) / A * b`` in
    ZOH mode and ``delta * b`` in Euler mode.
    """
    zoh = _check_mode(mode)
    if np.any(delta.data <= 0):
        raise ValueError("discretize needs strictly positive step sizes")
    if a_log.shape[0] != delta.shape[-1] or a_log.shape[1] != b.shape[-1]:
        raise ShapeError(f"a_log {a_log.shape} vs delta {delta.shape} and b {b.shape}")
    a = -np.exp(a_log.data)
    dt = delta.data[..., None]
    a_bar = np.exp(dt * a)
    if not np.all((a_bar > 0) & (a_bar < 1)):
        raise FloatingPointError("transition factors left the open interval (0, 1)")

    def bw_a(g):
        ga = g * a_bar
        return (ga * dt).sum(axis=(0, 1)) * a, (ga * a).sum(-1)

    a_out = make_op(a_bar, (a_log, delta), bw_a, "discretize_a")

    coef = zoh_coef(dt, a) if zoh else np.broadcast_to(dt, a_bar.shape)
    bb = b.data[:, :, None, :]

    def bw_b(g):
        gcoef = g * bb
        gb = (g * coef).sum(axis=2)
        if zoh:
            c_dt, c_da = zoh_coef_grads(dt, a)
            return (gcoef * c_da).sum(axis=(0, 1)) * a, (gcoef * c_dt).sum(-1), gb
        return np.zeros_like(a_log.data), gcoef.sum(-1), gb

    b_out = make_op(coef * bb, (a_log, delta, b), bw_b, "discretize_b")
    return a_out, b_out


def _scan_blocked(x, a_bar, b_bar, c, d_skip, block):
    bsz, length, di, n = a_bar.shape
    u = b_bar * x[..., None]
    h0 = np.zeros((bsz, di, n), dtype=x.dtype)
    y = np.empty_like(x)
    for s0 in range(0, length, block):
        s1 = min(s0 + block, length)
        tb = s1 - s0
        ac = a_bar[:, s0:s1]
        r = np.arange(tb)
        # factors[:, r, s] = a_r when r > s else 1; cumprod over r gives prod_{s<q<=r} a_q
        factors = np.where((r[:, None] > r[None, :])[None, :, :, None, None],
                           ac[:, :, None], 1.0)
        decay = np.cumprod(factors, axis=1) * (r[:, None] >= r[None, :])[None, :, :, None, None]
        h = np.einsum("btsdn,bsdn->btdn", decay, u[:, s0:s1])
        h += np.cumprod(ac, axis=1) * h0[:, None]
        y[:, s0:s1] = np.einsum("btdn,btn->btd", h, c[:, s0:s1])
        h0 = h[:, -1]
    return y + d_skip * x


def _scan_states(x, a_bar, b_bar):
    states = np.empty_like(a_bar)
    h = np.zeros(a_bar.shape[:1] + a_bar.shape[2:], dtype=x.dtype)
    for t in range(x.shape[1]):
        h = a_bar[:, t] * h + b_bar[:, t] * x[:, t, :, None]
        states[:, t] = h
    return states


def selective_scan(x: Tensor, a_bar: Tensor, b_bar: Tensor, c: Tensor, d_skip: Tensor,
                   method: str = "sequential", block: int = 16) -> Tensor:
    """h_t = a_bar_t * h_{t-1} + b_bar_t * x_t;  y_t = <c_t, h_t> + d_skip * x_t.

    ``method="blocked"`` evaluates each block of ``block`` steps as a
    lower-triangular decay matrix product and carries the state between
    blocks; it must agree with the sequential recurrence.
    """
    bsz, length, di = x.shape
    n = c.shape[-1]
    want = (bsz, length, di, n)
    if a_bar.shape != want or b_bar.shape != want or c.shape != (bsz, length, n) or d_skip.shape != (di,):
        raise ShapeError(f"scan shapes disagree: x {x.shape}, a_bar {a_bar.shape}, "
                         f"b_bar {b_bar.shape}, c {c.shape}, d_skip {d_skip.shape}")
    if method == "sequential":
        states = _scan_states(x.data, a_bar.data, b_bar.data)
        y = np.einsum("btdn,btn->btd", states, c.data) + d_skip.data * x.data
    elif method == "blocked":
        states = None
        y = _scan_blocked(x.data, a_bar.data, b_bar.data, c.data, d_skip.data, block)
    else:
        raise ValueError(f"unknown scan method {method!r}")

    def bw(g):
        hs = states if states is not None else _scan_states(x.data, a_bar.data, b_bar.data)
        ga = np.empty_like(a_bar.data)
        gb = np.empty_like(b_bar.data)
        gx = g * d_skip.data
        gh = np.zeros((bsz, di, n), dtype=g.dtype)
        for t in range(length - 1, -1, -1):
            gh = gh + c.data[:, t, None, :] * g[:, t, :, None]
            ga[:, t] = gh * (hs[:, t - 1] if t else 0.0)
            gb[:, t] = gh * x.data[:, t, :, None]
            gx[:, t] += (gh * b_bar.data[:, t]).sum(-1)
            gh = gh * a_bar.data[:, t]
        gc = np.einsum("btdn,btd->btn", hs, g)
        return gx, ga, gb, gc, (g * x.data).sum(axis=(0, 1))

    return make_op(y, (x, a_bar, b_bar, c, d_skip), bw, "selective_scan")


def selective_scan_fused(x: Tensor, delta: Tensor, a_log: Tensor, b: Tensor, c: Tensor,
                         d_skip: Tensor, mode: str = "zoh") -> Tensor:
    """Discretize and scan in one kernel without materializing [B, L, Di, N]."""
    zoh = _check_mode(mode)
    bsz, length, di = x.shape
    n = a_log.shape[1]
    if delta.shape != x.shape or a_log.shape[0] != di or b.shape != (bsz, length, n) \
            or c.shape != (bsz, length, n) or d_skip.shape != (di,):
        raise ShapeError(f"fused scan shapes disagree: x {x.shape}, delta {delta.shape}, "
                         f"a_log {a_log.shape}, b {b.shape}, c {c.shape}, d_skip {d_skip.shape}")
    a = -np.exp(a_log.data)
    args = (x.data, delta.data, a, b.data, c.data, d_skip.data)
    needs_grad = T._grad_enabled() and any(
        t.requires_grad for t in (x, delta, a_log, b, c, d_skip))
    y, states = kernels.scan_forward(*args, zoh=zoh, save_states=needs_grad)

    def bw(g):
        dx, ddelta, da, db, dc, dd = kernels.scan_backward(
            np.ascontiguousarray(g), *args, zoh=zoh, states=states)
        return dx, ddelta, da * a, db, dc, dd

    return make_op(y, (x, delta, a_log, b, c, d_skip), bw, "selective_scan_fused")


def _reverse_index(lengths: np.ndarray, length: int) -> np.ndarray:
    lengths = np.asarray(lengths)
    if np.any(lengths > length) or np.any(lengths < 0):
        raise ValueError(f"valid lengths must lie in [0, {length}], got max {lengths.max()}")
    j = np.arange(length)[None, :]
    start = (length - lengths)[:, None]
    return np.where(j < start, j, 2 * length - lengths[:, None] - 1 - j)


def reverse_valid(arr: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each row's left-padded valid suffix along axis 1."""
    arr = np.asarray(arr)
    perm = _reverse_index(lengths, arr.shape[1])
    return arr[np.arange(arr.shape[0])[:, None], perm]


def reverse_valid_tensor(x: Tensor, lengths: np.ndarray) -> Tensor:
    perm = _reverse_index(lengths, x.shape[1])
    return T.index(x, (np.arange(x.shape[0])[:, None], perm))


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class MambaBlock(Module):
    """Projection, causal conv, selective scan and output projection."""

    def __init__(self, dim: int, rng: np.random.Generator, d_state: int = 16, d_conv: int = 4,
                 expand: int = 2, dt_min: float = 1e-3, dt_max: float = 1e-1):
        d_inner = expand * dim
        self.d_inner, self.d_state = d_inner, d_state
        self.dt_rank = math.ceil(d_inner / 16)
        self.proj_in = Linear(dim, 2 * d_inner, rng)
        self.conv = Conv1DDepthwise(d_inner, d_conv, rng)
        self.proj_bcd = Linear(d_inner, 2 * d_state + self.dt_rank, rng)
        self.delta_proj = Linear(self.dt_rank, d_inner, rng)
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
        self.delta_proj.bias.data[:] = _inv_softplus(dt)
        self.a_log = T.parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=float), (d_inner, 1))))
        self.d_skip = T.parameter(np.ones(d_inner))
        self.proj_out = Linear(d_inner, dim, rng)

    def __call__(self, x: Tensor, discretization: str = "zoh", combine: str = "gate") -> Tensor:
        xb, gate = T.split(self.proj_in(x), [self.d_inner, self.d_inner])
        xc = T.silu(self.conv(xb))
        b, c, dr = T.split(self.proj_bcd(xc), [self.d_state, self.d_state, self.dt_rank])
        delta = T.softplus(self.delta_proj(dr))
        h = selective_scan_fused(xc, delta, self.a_log, b, c, self.d_skip, discretization)
        if combine == "gate":
            y = h * T.silu(gate)
        elif combine == "residual":
            y = T.silu(h) + xc
        else:
            raise ValueError(f"combine must be 'gate' or 'residual', got {combine!r}")
        return self.proj_out(y)


class EchoMambaLayer(Module):
    """Forward and reversed selective blocks, fused and refined by a GLU."""

    def __init__(self, dim: int, rng: np.random.Generator, d_state: int = 16, d_conv: int = 4,
                 expand: int = 2, dropout_rate: float = 0.2, bidirectional: bool = True,
                 discretization: str = "zoh", combine: str = "gate", ln_eps: float | None = None):
        _check_mode(discretization)
        self.forward_block = MambaBlock(dim, rng, d_state, d_conv, expand)
        self.norm_fwd = LayerNorm(dim, ln_eps)
        self.bidirectional = bidirectional
        if bidirectional:
            self.reverse_block = MambaBlock(dim, rng, d_state, d_conv, expand)
            self.norm_rev = LayerNorm(dim, ln_eps)
            self.fuse = Linear(2 * dim, dim, rng)
        self.glu = GLU(dim, dim, rng)
        self.norm_out = LayerNorm(dim, ln_eps)
        self.dropout_rate = dropout_rate
        self.discretization = discretization
        self.combine = combine

    def _add_norm(self, x, y, norm, training, rng):
        return norm(x + dropout(y, self.dropout_rate, training, rng))

    def __call__(self, x: Tensor, lengths: np.ndarray, training: bool = False, rng=None) -> Tensor:
        kw = dict(discretization=self.discretization, combine=self.combine)
        y_fwd = self._add_norm(x, self.forward_block(x, **kw), self.norm_fwd, training, rng)
        if self.bidirectional:
            xr = reverse_valid_tensor(x, lengths)
            y_rev = self._add_norm(xr, self.reverse_block(xr, **kw), self.norm_rev, training, rng)
            fused = self.fuse(T.concat([y_fwd, reverse_valid_tensor(y_rev, lengths)], axis=-1))
        else:
            fused = y_fwd
        return self._add_norm(fused, self.glu(fused), self.norm_out, training, rng)
