"""Central finite-difference checks for every differentiable op and the model.

Run in 64-bit mode.  Each check projects the op output onto a fixed random
direction, so one scalar loss covers every output element.
"""
from __future__ import annotations

import time
from functools import partial
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .model import EchoMambaModel, ModelConfig, cross_entropy
from .spectral import SpectralFilterLayer, spectral_filter
from .ssm import EchoMambaLayer, MambaBlock, discretize, selective_scan, selective_scan_fused

__all__ = ["CheckResult", "check_gradients", "run_suite", "TOLERANCE", "STEP"]

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    rel_error: float
    n_values: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def check_gradients(loss_fn: Callable[[], T.Tensor], params: list[T.Tensor],
                    h: float = STEP) -> float:
    """Largest per-tensor relative error between backward and central differences."""
    T.current_tape().clear()
    for p in params:
        p.grad = None
    T.backward(loss_fn())
    worst = 0.0
    with T.no_grad():
        for p in params:
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad
            numeric = np.empty_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = float(loss_fn().data)
                flat[i] = old - h
                down = float(loss_fn().data)
                flat[i] = old
                numeric.reshape(-1)[i] = (up - down) / (2 * h)
            scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-8)
            worst = max(worst, float(np.linalg.norm(numeric - analytic) / scale))
    return worst


def _projected(fn, rng):
    holder = {}

    def loss():
        out = fn()
        if "w" not in holder:
            holder["w"] = rng.normal(size=out.shape)
        return (out * holder["w"]).sum()

    return loss


def _cases(rng: np.random.Generator):
    def P(*shape, lo=-2.0, hi=2.0):
        return T.parameter(rng.uniform(lo, hi, size=shape))

    cases = []

    def add(name, fn, *args, params=None):
        # args are bound now; params default to the tensor args
        cases.append((name, lambda: fn(*args), params or [a for a in args if isinstance(a, T.Tensor)]))

    for op in ("add", "sub", "mul"):
        add(f"elementwise.{op}", partial(T.elementwise, op), P(3, 4), P(4))
    add("elementwise.div", T.div, P(2, 3), P(2, 3, lo=0.5, hi=2.0))
    for op in ("neg", "exp", "sigmoid", "silu", "softplus"):
        add(f"elementwise.{op}", partial(T.elementwise, op), P(3, 5))
    add("matmul", T.matmul, P(2, 3, 4), P(4, 5))
    add("reduce.sum", partial(T.reduce, "sum", axis=1), P(3, 4, 2))
    add("reduce.mean", partial(T.reduce, "mean", axis=(0, 2), keepdims=True), P(3, 4, 2))
    add("concat+index", lambda u, v: T.concat([u, v], axis=1)[:, 1:4], P(2, 3), P(2, 2))

    add("embed", partial(nn.embed, np.array([[0, 2, 2], [5, 1, 0]])), P(6, 3))
    add("linear", nn.linear, P(2, 3, 4), P(4, 3), P(3))
    add("layer_norm", nn.layer_norm, P(2, 3, 5), P(5), P(5))
    add("dropout", lambda x: nn.dropout(x, 0.3, True, np.random.default_rng(7)), P(3, 4))
    add("glu", nn.glu, P(2, 3), P(3, 4), P(4), P(3, 4), P(4))
    add("conv1d_depthwise", nn.conv1d_depthwise, P(2, 6, 3), P(3, 4), P(3))

    for length in (6, 7):
        bins = length // 2 + 1
        add(f"spectral_filter.L{length}", spectral_filter, P(2, length, 3), P(bins, 3), P(bins, 3))
    layer = SpectralFilterLayer(6, 3, 0.0, rng)
    layer.coef_real.data[:] = rng.uniform(-1, 1, size=layer.coef_real.shape)
    layer.coef_imag.data[:] = rng.uniform(-1, 1, size=layer.coef_imag.shape)
    x = P(2, 6, 3)
    add("filter_layer", layer, x, params=[x] + layer.parameters())

    a_log, delta, bm = P(3, 2, lo=-1, hi=1), P(2, 4, 3, lo=0.05, hi=2.0), P(2, 4, 2)
    for mode in ("zoh", "euler"):
        add(f"discretize.{mode}",
            lambda a, d, b, mode=mode: T.concat(discretize(a, d, b, mode), axis=-1),
            a_log, delta, bm)
    x, c, dsk = P(2, 5, 3), P(2, 5, 2), P(3)
    ab, bbar = P(2, 5, 3, 2, lo=0.05, hi=0.95), P(2, 5, 3, 2)
    for method in ("sequential", "blocked"):
        add(f"selective_scan.{method}", partial(selective_scan, method=method, block=2),
            x, ab, bbar, c, dsk)
    delta2, bf = P(2, 5, 3, lo=0.05, hi=2.0), P(2, 5, 2)
    for mode in ("zoh", "euler"):
        add(f"selective_scan_fused.{mode}", partial(selective_scan_fused, mode=mode),
            x, delta2, a_log, bf, c, dsk)

    x = P(2, 5, 4)
    block = _randomized(MambaBlock(4, rng, d_state=2, d_conv=2, expand=2), rng)
    add("mamba_block", block, x, params=[x] + block.parameters())
    block_r = _randomized(MambaBlock(4, rng, d_state=2, d_conv=2, expand=2), rng)
    add("mamba_block.residual", partial(block_r, combine="residual"), x,
        params=[x] + block_r.parameters())
    layer = _randomized(EchoMambaLayer(4, rng, d_state=2, d_conv=2, expand=2, dropout_rate=0.0), rng)
    add("echomamba_layer", partial(layer, lengths=np.array([5, 3])), x,
        params=[x] + layer.parameters())

    add("cross_entropy", partial(cross_entropy, targets=np.array([1, 3, 6, 2])), P(4, 7))
    return cases


def _randomized(module, rng: np.random.Generator):
    """Redraw every parameter except ``a_log`` uniformly in [-1, 1].

    The default init keeps step sizes near 1e-2, which leaves some gradients
    around 1e-8, below what central differences resolve at STEP.
    """
    for name, p in module.named_parameters():
        if not name.endswith("a_log"):
            p.data[...] = rng.uniform(-1.0, 1.0, size=p.shape)
    return module


def _model_case(rng: np.random.Generator):
    cfg = ModelConfig(n_items=12, dim=4, d_state=2, d_conv=2, expand=2, n_layers=1, max_len=6,
                      dropout=0.0)
    model = _randomized(EchoMambaModel(cfg, rng), rng)
    ids = np.array([[0, 0, 3, 7, 1, 12], [5, 2, 9, 11, 4, 8], [0, 0, 0, 0, 0, 6]])
    lengths = np.array([4, 6, 1])
    targets = np.array([2, 10, 12])
    return ("end_to_end_model", lambda: cross_entropy(model(ids, lengths), targets),
            model.parameters())


def run_suite(seed: int = 0, report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run every check in 64-bit mode; returns one result per check."""
    results = []
    with T.precision(64):
        rng = np.random.default_rng(seed)
        cases = _cases(rng)
        cases.append(_model_case(rng))
        for name, fn, params in cases:
            t0 = time.perf_counter()
            loss = fn if name in ("cross_entropy", "end_to_end_model") else _projected(fn, rng)
            err = check_gradients(loss, params)
            res = CheckResult(name, err, sum(p.size for p in params), time.perf_counter() - t0)
            results.append(res)
            if report:
                report(res)
    return results
