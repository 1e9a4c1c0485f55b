"""Full recommender: embedding, spectral filter, bidirectional layers and
tied-embedding scoring."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .nn import Embedding, LayerNorm, Module, dropout
from .spectral import SpectralFilterLayer
from .ssm import EchoMambaLayer
from .tensor import Tensor, make_op

__all__ = ["ModelConfig", "EchoMambaModel", "cross_entropy", "mask_padding"]


@dataclass
class ModelConfig:
    n_items: int
    dim: int = 64
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    n_layers: int = 1
    max_len: int = 50
    dropout: float = 0.2
    filter_dropout: float | None = None
    filter_enabled: bool = True
    filter_per_layer: bool = False
    bidirectional: bool = True
    discretization: str = "zoh"
    combine: str = "gate"

    def to_dict(self) -> dict:
        return asdict(self)


class EchoMambaModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Embedding(cfg.n_items, cfg.dim, rng)
        self.embed_norm = LayerNorm(cfg.dim)
        fdrop = cfg.dropout if cfg.filter_dropout is None else cfg.filter_dropout
        n_filters = (cfg.n_layers if cfg.filter_per_layer else 1) if cfg.filter_enabled else 0
        self.filters = [SpectralFilterLayer(cfg.max_len, cfg.dim, fdrop, rng) for _ in range(n_filters)]
        self.layers = [
            EchoMambaLayer(cfg.dim, rng, cfg.d_state, cfg.d_conv, cfg.expand, cfg.dropout,
                           cfg.bidirectional, cfg.discretization, cfg.combine)
            for _ in range(cfg.n_layers)
        ]

    def encode(self, ids: np.ndarray, lengths: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """Representation at the most recent position of each row, [B, D]."""
        h = self.embed_norm(dropout(self.embedding(ids), self.cfg.dropout, training, rng))
        if self.filters and not self.cfg.filter_per_layer:
            h = self.filters[0](h, training, rng)
        for i, layer in enumerate(self.layers):
            if self.cfg.filter_per_layer and self.filters:
                h = self.filters[i](h, training, rng)
            h = layer(h, lengths, training, rng)
        # left padding puts the latest item in the final column
        return h[:, -1, :]

    def score(self, y: Tensor) -> Tensor:
        return mask_padding(T.matmul(y, _transpose(self.embedding.weight)))

    def __call__(self, ids, lengths, training: bool = False, rng=None) -> Tensor:
        return self.score(self.encode(ids, lengths, training, rng))


def _transpose(w: Tensor) -> Tensor:
    return make_op(w.data.T, (w,), lambda g: (g.T,), "transpose")


def mask_padding(scores: Tensor) -> Tensor:
    """Force column 0 (padding item) to -inf; its gradient is dropped."""
    out = scores.data.copy()
    out[:, 0] = -np.inf

    def bw(g):
        g = g.copy()
        g[:, 0] = 0.0
        return (g,)

    return make_op(out, (scores,), bw, "mask_padding", check_finite=False)


def cross_entropy(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over real items (column 0 excluded)."""
    targets = np.asarray(targets)
    if np.any(targets < 1) or np.any(targets >= scores.shape[1]):
        raise ValueError(f"targets must lie in [1, {scores.shape[1] - 1}]")
    z = scores.data[:, 1:]
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(targets))
    logp = (z - m - np.log(s))[rows, targets - 1]
    n = len(targets)

    def bw(g):
        p = e / s
        p[rows, targets - 1] -= 1.0
        out = np.zeros_like(scores.data)
        out[:, 1:] = p * (g / n)
        return (out,)

    return make_op(np.asarray(-logp.mean()), (scores,), bw, "cross_entropy")
