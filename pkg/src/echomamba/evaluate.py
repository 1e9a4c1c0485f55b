"""Full-catalog ranking metrics and efficiency benchmarks."""
from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import SequenceDataset, make_batches

__all__ = [
    "EvalReport",
    "rank_from_scores",
    "rank_targets",
    "popularity_ranks",
    "hr_at_k",
    "ndcg_at_k",
    "mrr_at_k",
    "evaluate",
    "count_params",
    "activation_bytes",
    "time_scan",
    "scan_scaling",
    "bench_efficiency",
]


def rank_from_scores(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target among columns 1..V; ties go to the smaller index."""
    s = scores[:, 1:]
    rows = np.arange(len(targets))
    t = s[rows, targets - 1][:, None]
    cols = np.arange(1, scores.shape[1])[None, :]
    ahead = (s > t) | ((s == t) & (cols < targets[:, None]))
    return 1 + ahead.sum(axis=1)


def rank_targets(model, ds: SequenceDataset, split: str = "test", eval_batch: int = 4096,
                 mask_seen: bool = False) -> np.ndarray:
    """Rank every user's held-out item under full-catalog scoring."""
    ranks = []
    # the whole history, not just the truncated input window, counts as seen
    history = {u: inp for u, inp, _ in ds.split_rows(split)} if mask_seen else {}
    with T.no_grad():
        for batch in make_batches(ds, split, eval_batch, model.cfg.max_len):
            scores = model(batch.item_ids, batch.lengths, training=False).data.astype(np.float64)
            for r, u in enumerate(batch.users if mask_seen else ()):
                seen = history[int(u)]
                scores[r, seen[seen != batch.targets[r]]] = -np.inf
            ranks.append(rank_from_scores(scores, batch.targets))
    if not ranks:
        raise ValueError(f"split {split!r} is empty")
    return np.concatenate(ranks)


def popularity_ranks(ds: SequenceDataset, split: str = "test") -> np.ndarray:
    """Ranks under a most-popular-first scorer fitted on training history."""
    counts = np.zeros(ds.n_items + 1)
    for seq in ds.sequences:
        hist = seq[: len(seq) - 2]
        np.add.at(counts, hist, 1)
    rows = [r for r in ds.split_rows(split) if len(r[1])]
    targets = np.array([r[2] for r in rows])
    scores = np.broadcast_to(counts, (len(rows), len(counts))).copy()
    return rank_from_scores(scores, targets)


def _check(ranks, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks given")
    return ranks


def hr_at_k(ranks, k: int = 10) -> float:
    ranks = _check(ranks, k)
    return float(np.mean(ranks <= k))


def ndcg_at_k(ranks, k: int = 10) -> float:
    ranks = _check(ranks, k)
    return float(np.mean(np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)))


def mrr_at_k(ranks, k: int = 10) -> float:
    ranks = _check(ranks, k)
    return float(np.mean(np.where(ranks <= k, 1.0 / ranks, 0.0)))


@dataclass
class EvalReport:
    k: int
    hr: float
    ndcg: float
    mrr: float
    n_users: int
    timing: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def evaluate(model, ds: SequenceDataset, split: str = "test", k: int = 10,
             eval_batch: int = 4096, mask_seen: bool = False) -> EvalReport:
    t0 = time.perf_counter()
    ranks = rank_targets(model, ds, split, eval_batch, mask_seen)
    secs = time.perf_counter() - t0
    return EvalReport(k, hr_at_k(ranks, k), ndcg_at_k(ranks, k), mrr_at_k(ranks, k), len(ranks),
                      {"eval_seconds": secs,
                       "scored_items_per_second": len(ranks) * ds.n_items / max(secs, 1e-12)})


def count_params(cfg) -> int:
    """Analytic parameter count from layer shapes."""
    d, n, k = cfg.dim, cfg.d_state, cfg.d_conv
    di = cfg.expand * d
    r = math.ceil(di / 16)
    block = ((d * 2 * di + 2 * di) + (di * k + di) + (di * (2 * n + r) + 2 * n + r)
             + (r * di + di) + di * n + di + (di * d + d))
    layer = block + 2 * d + 2 * (d * d + d) + 2 * d
    if cfg.bidirectional:
        layer += block + 2 * d + (2 * d * d + d)
    filt = 2 * (cfg.max_len // 2 + 1) * d + 2 * d
    n_filters = (cfg.n_layers if cfg.filter_per_layer else 1) if cfg.filter_enabled else 0
    return (cfg.n_items + 1) * d + 2 * d + n_filters * filt + cfg.n_layers * layer


def activation_bytes(cfg, batch: int, itemsize: int = 4) -> int:
    """Rough per-step activation footprint of one training batch."""
    di = cfg.expand * cfg.dim
    per_block = batch * cfg.max_len * (2 * di + 2 * di + 2 * cfg.d_state + 2 * di + 3 * di + cfg.dim)
    per_layer = per_block * (2 if cfg.bidirectional else 1) + batch * cfg.max_len * 8 * cfg.dim
    return itemsize * (cfg.n_layers * per_layer + batch * cfg.max_len * 4 * cfg.dim
                       + batch * (cfg.n_items + 1) * 2)


def _scan_inputs(length, batch, d_inner, d_state, seed):
    rng = np.random.default_rng(seed)
    return (T.Tensor(rng.normal(size=(batch, length, d_inner))),
            T.Tensor(rng.uniform(1e-3, 1e-1, size=(batch, length, d_inner))),
            T.Tensor(np.log(np.tile(np.arange(1, d_state + 1, dtype=float), (d_inner, 1)))),
            T.Tensor(rng.normal(size=(batch, length, d_state))),
            T.Tensor(rng.normal(size=(batch, length, d_state))),
            T.Tensor(np.ones(d_inner)))


def _timed_scan(args) -> float:
    from .ssm import selective_scan_fused

    t0 = time.perf_counter()
    selective_scan_fused(*args)
    return time.perf_counter() - t0


def time_scan(length: int, batch: int = 8, d_inner: int = 64, d_state: int = 16,
              repeats: int = 5, seed: int = 0) -> float:
    """Median wall time of one forward selective scan at the given length."""
    args = _scan_inputs(length, batch, d_inner, d_state, seed)
    with T.no_grad():
        _timed_scan(args)  # warm-up / jit compile
        return statistics.median(_timed_scan(args) for _ in range(repeats))


def scan_scaling(length: int, batch: int = 8, d_inner: int = 64, d_state: int = 16,
                 repeats: int = 5, seed: int = 0) -> tuple[float, float]:
    """Median scan times at ``length`` and ``2 * length``.

    The two lengths are timed alternately so slow drift in machine load
    affects both medians alike.
    """
    short = _scan_inputs(length, batch, d_inner, d_state, seed)
    long = _scan_inputs(2 * length, batch, d_inner, d_state, seed)
    t1, t2 = [], []
    with T.no_grad():
        _timed_scan(short)
        _timed_scan(long)
        for _ in range(repeats):
            t1.append(_timed_scan(short))
            t2.append(_timed_scan(long))
    return statistics.median(t1), statistics.median(t2)


def bench_efficiency(model, ds: SequenceDataset, train_cfg, repeats: int = 5,
                     scan_length: int = 2048) -> dict:
    from .train import Adam, rng_streams, run_epoch

    streams = rng_streams(train_cfg.seed)
    opt = Adam(model.parameters(), train_cfg.lr)
    epoch_times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_epoch(model, ds, train_cfg, streams, opt)
        epoch_times.append(time.perf_counter() - t0)
    infer = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        rank_targets(model, ds, "test", train_cfg.eval_batch_size)
        infer.append(time.perf_counter() - t0)
    t1, t2 = scan_scaling(scan_length, repeats=repeats)
    itemsize = np.dtype(T.get_dtype()).itemsize
    n_params = model.n_params()
    return {
        "train_seconds_per_epoch": statistics.median(epoch_times),
        "inference_seconds": statistics.median(infer),
        "n_params": n_params,
        "param_bytes": n_params * itemsize,
        "activation_bytes": activation_bytes(model.cfg, train_cfg.batch_size, itemsize),
        "scan_seconds": {str(scan_length): t1, str(2 * scan_length): t2},
        "scan_scaling_ratio": t2 / t1,
    }
