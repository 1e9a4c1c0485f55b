"""Adam training loop, early stopping and checkpoints."""
from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import IO, Callable

import numpy as np

from . import tensor as T
from .data import SequenceDataset, make_batches
from .evaluate import evaluate
from .model import EchoMambaModel, ModelConfig, cross_entropy

__all__ = [
    "TrainConfig",
    "Adam",
    "TrainingError",
    "rng_streams",
    "run_epoch",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = "ECHOMAMBA-CKPT"
CHECKPOINT_VERSION = 1
STREAMS = ("init", "dropout", "shuffle")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 2048
    eval_batch_size: int = 4096
    epochs: int = 300
    patience: int = 10
    seed: int = 42
    all_prefixes: bool = False
    mask_seen: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_k: int = 10


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators so one stream never shifts another."""
    return {name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
            for i, name in enumerate(STREAMS)}


class Adam:
    """Bias-corrected Adam over a fixed list of parameters."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} ({p.name or p.shape}) has no gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def run_epoch(model: EchoMambaModel, ds: SequenceDataset, cfg: TrainConfig,
              streams: dict[str, np.random.Generator], optimizer: Adam | None,
              epoch: int = 0) -> float:
    """One pass over the training rows; returns the row-weighted mean loss."""
    total, count = 0.0, 0
    tape = T.current_tape()
    for bi, batch in enumerate(make_batches(ds, "train", cfg.batch_size, model.cfg.max_len,
                                            streams["shuffle"], cfg.all_prefixes)):
        tape.clear()
        model.zero_grad()
        scores = model(batch.item_ids, batch.lengths, training=True, rng=streams["dropout"])
        loss = cross_entropy(scores, batch.targets)
        value = float(loss.data)
        if not math.isfinite(value):
            tape.clear()
            raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
        T.backward(loss)
        if optimizer is not None:
            optimizer.step()
        total += value * len(batch)
        count += len(batch)
    return total / max(count, 1)


@dataclass
class TrainState:
    epoch: int = 0
    best_hr: float = -1.0
    bad_epochs: int = 0
    best_params: list | None = None
    history: list = field(default_factory=list)


def train(model: EchoMambaModel, ds: SequenceDataset, cfg: TrainConfig,
          streams: dict[str, np.random.Generator] | None = None,
          log: IO[str] | Callable[[dict], None] | None = None,
          optimizer: Adam | None = None, state: TrainState | None = None,
          max_epochs: int | None = None, timing: bool = True) -> TrainState:
    """Train until ``cfg.epochs`` or early stopping; restores the best weights.

    ``max_epochs`` stops after that many epochs of this call without
    restoring, so the run can be checkpointed and resumed.
    """
    streams = streams or rng_streams(cfg.seed)
    optimizer = optimizer or Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    state = state or TrainState()
    emit = _emitter(log)
    params = model.parameters()
    ran = 0
    while state.epoch < cfg.epochs and state.bad_epochs < cfg.patience:
        if max_epochs is not None and ran >= max_epochs:
            return state
        t0 = time.perf_counter()
        loss = run_epoch(model, ds, cfg, streams, optimizer, state.epoch)
        val = evaluate(model, ds, "validation", cfg.eval_k, cfg.eval_batch_size, cfg.mask_seen)
        state.epoch += 1
        ran += 1
        rec = {"epoch": state.epoch, "train_loss": loss, f"val_hr{cfg.eval_k}": val.hr}
        if timing:
            rec["wall_seconds"] = time.perf_counter() - t0
        state.history.append(rec)
        emit(rec)
        if val.hr > state.best_hr:
            state.best_hr = val.hr
            state.bad_epochs = 0
            state.best_params = [p.data.copy() for p in params]
        else:
            state.bad_epochs += 1
    if state.best_params is not None:
        for p, best in zip(params, state.best_params):
            p.data[...] = best
    return state


def _emitter(log):
    if log is None:
        return lambda rec: None
    if callable(log):
        return log

    def emit(rec):
        log.write(json.dumps(rec) + "\n")
        log.flush()

    return emit


def save_checkpoint(path, model: EchoMambaModel, optimizer: Adam, state: TrainState,
                    streams: dict[str, np.random.Generator], train_cfg: TrainConfig) -> None:
    names = [n for n, _ in model.named_parameters()]
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "precision": int(np.dtype(T.get_dtype()).itemsize * 8),
        "model": model.cfg.to_dict(),
        "train": asdict(train_cfg),
        "epoch": state.epoch,
        "best_hr": state.best_hr,
        "bad_epochs": state.bad_epochs,
        "history": state.history,
        "adam_step": optimizer.step_count,
        "rng": {k: g.bit_generator.state for k, g in streams.items()},
        "names": names,
        "has_best": state.best_params is not None,
    }
    arrays = {}
    for i, (n, p) in enumerate(model.named_parameters()):
        arrays[f"param/{n}"] = p.data
        arrays[f"adam_m/{n}"] = optimizer.m[i]
        arrays[f"adam_v/{n}"] = optimizer.v[i]
        if state.best_params is not None:
            arrays[f"best/{n}"] = state.best_params[i]
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Rebuild ``(model, optimizer, state, streams, train_cfg)`` from disk."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header.get('version')} unsupported")
        arrays = {k: z[k] for k in z.files if k != "header"}
    T.set_precision(header["precision"])
    train_cfg = TrainConfig(**header["train"])
    model = EchoMambaModel(ModelConfig(**header["model"]), np.random.default_rng(0))
    named = dict(model.named_parameters())
    if sorted(named) != sorted(header["names"]):
        raise ValueError(f"{path}: parameter names do not match the model configuration")
    optimizer = Adam(model.parameters(), train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    optimizer.step_count = header["adam_step"]
    for i, (n, p) in enumerate(model.named_parameters()):
        p.data[...] = arrays[f"param/{n}"]
        optimizer.m[i][...] = arrays[f"adam_m/{n}"]
        optimizer.v[i][...] = arrays[f"adam_v/{n}"]
    state = TrainState(header["epoch"], header["best_hr"], header["bad_epochs"],
                       [arrays[f"best/{n}"].copy() for n, _ in model.named_parameters()]
                       if header["has_best"] else None,
                       header["history"])
    streams = rng_streams(train_cfg.seed)
    for k, g in streams.items():
        g.bit_generator.state = header["rng"][k]
    return model, optimizer, state, streams, train_cfg


def log_to_stdout(rec: dict) -> None:
    sys.stdout.write(json.dumps(rec) + "\n")
