"""Neural layers composed by the model: linear, embedding, layer norm,
depthwise causal convolution, dropout and GLU."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, make_op

__all__ = [
    "Module",
    "Linear",
    "Embedding",
    "LayerNorm",
    "Conv1DDepthwise",
    "GLU",
    "embed",
    "linear",
    "layer_norm",
    "dropout",
    "glu",
    "conv1d_depthwise",
    "default_ln_eps",
]


class Module:
    """Parameter container; children and parameters are found by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = T.parameter(_uniform(rng, n_in, (n_in, n_out)))
        self.bias = T.parameter(_uniform(rng, n_in, (n_out,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = T.matmul(x, weight)
    return out if bias is None else out + bias


class Embedding(Module):
    """Item table with row 0 reserved for padding."""

    def __init__(self, n_items: int, dim: int, rng: np.random.Generator):
        self.weight = T.parameter(rng.normal(0.0, 0.02, size=(n_items + 1, dim)))

    @property
    def n_items(self) -> int:
        return self.weight.shape[0] - 1

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embed(ids, self.weight)


def embed(ids: np.ndarray, table: Tensor) -> Tensor:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError(f"ids must be integers, got {ids.dtype}")
    if ids.size:
        lo, hi = int(ids.min()), int(ids.max())
        if lo < 0 or hi >= table.shape[0]:
            bad = lo if lo < 0 else hi
            raise IndexError(f"item id {bad} outside [0, {table.shape[0] - 1}]")
    rows = table.shape[0]

    def bw(g):
        out = np.zeros((rows, g.shape[-1]), dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (out,)

    return make_op(table.data[ids], (table,), bw, "embed")


def default_ln_eps() -> float:
    return 1e-12 if T.get_dtype() == np.float64 else 1e-5


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float | None = None):
        self.gain = T.parameter(np.ones(dim))
        self.shift = T.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.eps)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float | None = None) -> Tensor:
    d = gain.shape[0]
    if x.shape[-1] != d:
        raise ShapeError(f"layer_norm: last dim {x.shape[-1]} != {d}")
    eps = default_ln_eps() if eps is None else eps
    if eps <= 0:
        raise ValueError("layer norm epsilon must be positive")
    mu = x.data.mean(-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(xhat * gain.data + shift.data, (x, gain, shift), bw, "layer_norm")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return make_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


class GLU(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.value = Linear(n_in, n_out, rng)
        self.gate = Linear(n_in, n_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return glu(x, self.value.weight, self.value.bias, self.gate.weight, self.gate.bias)


def glu(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    if w1.shape != w2.shape:
        raise ShapeError(f"glu: value weight {w1.shape} and gate weight {w2.shape} differ")
    return linear(x, w1, b1) * T.sigmoid(linear(x, w2, b2))


class Conv1DDepthwise(Module):
    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator):
        self.kernel = T.parameter(_uniform(rng, kernel_size, (channels, kernel_size)))
        self.bias = T.parameter(_uniform(rng, kernel_size, (channels,)))

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d_depthwise(x, self.kernel, self.bias)


def conv1d_depthwise(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Per-channel causal convolution over axis 1 of a [B, L, C] input.

    Tap ``kernel[:, K-1]`` multiplies the current position and tap
    ``kernel[:, 0]`` the position K-1 steps back.
    """
    b, length, ch = x.shape
    if kernel.shape[0] != ch or bias.shape != (ch,):
        raise ShapeError(f"conv1d: {ch} input channels vs kernel {kernel.shape}, bias {bias.shape}")
    k = kernel.shape[1]
    xp = np.concatenate([np.zeros((b, k - 1, ch), dtype=x.data.dtype), x.data], axis=1)
    w = kernel.data
    out = np.broadcast_to(bias.data, x.shape).copy()
    for j in range(k):
        out += xp[:, j: j + length] * w[:, j]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for j in range(k):
            gxp[:, j: j + length] += g * w[:, j]
            gw[:, j] = (g * xp[:, j: j + length]).sum(axis=(0, 1))
        return gxp[:, k - 1:], gw, g.sum(axis=(0, 1))

    return make_op(out, (x, kernel, bias), bw, "conv1d_depthwise")
