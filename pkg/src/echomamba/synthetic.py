"""Synthetic interaction logs with a learnable next-item structure."""
from __future__ import annotations

import numpy as np

from .data import InteractionLog

__all__ = ["planted_cycle", "uniform_random"]


def planted_cycle(n_users: int = 500, n_items: int = 50, walk_len: int = 20, noise: float = 0.1,
                  seed: int = 0) -> InteractionLog:
    """Each user walks ``walk_len`` steps along one fixed random cycle over all items.

    The start point is random per user.  With probability ``noise`` an
    observed item is replaced by a uniformly random one; the walk itself
    keeps its place on the cycle.
    """
    rng = np.random.default_rng(seed)
    cycle = rng.permutation(n_items) + 1
    users, items, stamps = [], [], []
    for u in range(n_users):
        start = rng.integers(n_items)
        for t in range(walk_len):
            item = cycle[(start + t) % n_items]
            if rng.random() < noise:
                item = rng.integers(1, n_items + 1)
            users.append(f"u{u}")
            items.append(f"i{int(item)}")
            stamps.append(t)
    return InteractionLog(users, items, stamps)


def uniform_random(n_users: int = 200, n_items: int = 50, walk_len: int = 20,
                   seed: int = 0) -> InteractionLog:
    """Sequences with no structure at all."""
    rng = np.random.default_rng(seed)
    users, items, stamps = [], [], []
    for u in range(n_users):
        for t, v in enumerate(rng.integers(1, n_items + 1, size=walk_len)):
            users.append(f"u{u}")
            items.append(f"i{int(v)}")
            stamps.append(t)
    return InteractionLog(users, items, stamps)
