"""Run configuration: a flat ``section.key = value`` text file plus CLI overrides.

Precedence, lowest to highest: built-in defaults, config file, command-line
flags.  Unknown keys and out-of-range values are collected and reported
together.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config_text", "format_config"]


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass
class DatasetSection:
    path: str = ""
    format: str = "movielens_dat"
    k_core: int = 5
    k_core_mode: str = "iterative"
    max_len: int = 0  # 0 = pick by format: 200 for movielens_dat, 50 otherwise
    cache: str = ""


@dataclass
class ModelSection:
    dim: int = 64
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    n_layers: int = 1
    dropout: float = 0.2
    filter_dropout: float = -1.0  # negative = use dropout
    filter_enabled: bool = True
    filter_per_layer: bool = False
    bidirectional: bool = True
    discretization: str = "zoh"
    combine: str = "gate"


@dataclass
class TrainingSection:
    lr: float = 1e-3
    batch_size: int = 2048
    eval_batch_size: int = 4096
    epochs: int = 300
    patience: int = 10
    seed: int = 42
    precision: int = 32
    all_prefixes: bool = False
    mask_seen: bool = False


@dataclass
class OutputSection:
    log_path: str = ""
    checkpoint_path: str = "checkpoint.npz"
    ranks_csv: str = ""
    log_timing: bool = True  # wall_seconds makes logs differ run to run


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)

    def effective_max_len(self) -> int:
        if self.dataset.max_len > 0:
            return self.dataset.max_len
        return 200 if self.dataset.format == "movielens_dat" else 50

    def items(self):
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                yield f"{sec.name}.{f.name}", getattr(obj, f.name)

    def set(self, key: str, raw: Any, problems: list[str]) -> None:
        sec_name, _, name = key.partition(".")
        sec = getattr(self, sec_name, None) if sec_name in {f.name for f in fields(self)} else None
        if sec is None or name not in {f.name for f in fields(sec)}:
            problems.append(f"{key}: unknown key")
            return
        current = getattr(sec, name)
        try:
            setattr(sec, name, _coerce(raw, type(current)))
        except ValueError as exc:
            problems.append(f"{key}: {exc}")

    def validate(self) -> None:
        problems: list[str] = []
        d, m, t = self.dataset, self.model, self.training

        def need(ok, key, msg):
            if not ok:
                problems.append(f"{key}: {msg}")

        need(d.format in ("movielens_dat", "csv_triples"), "dataset.format",
             f"must be movielens_dat or csv_triples, got {d.format!r}")
        need(d.k_core >= 1, "dataset.k_core", "must be >= 1")
        need(d.k_core_mode in ("iterative", "single_pass"), "dataset.k_core_mode",
             "must be iterative or single_pass")
        need(d.max_len >= 0, "dataset.max_len", "must be >= 0")
        for key in ("dim", "d_state", "d_conv", "expand", "n_layers"):
            need(getattr(m, key) >= 1, f"model.{key}", "must be >= 1")
        need(0.0 <= m.dropout < 1.0, "model.dropout", "must be in [0, 1)")
        need(m.filter_dropout < 1.0, "model.filter_dropout", "must be < 1")
        need(m.discretization in ("zoh", "euler"), "model.discretization", "must be zoh or euler")
        need(m.combine in ("gate", "residual"), "model.combine", "must be gate or residual")
        if not m.filter_enabled:
            need(m.filter_dropout < 0, "model.filter_dropout",
                 "set while the filter layer is disabled")
            need(not m.filter_per_layer, "model.filter_per_layer",
                 "set while the filter layer is disabled")
        need(t.lr >= 0.0, "training.lr", "must be >= 0")
        for key in ("batch_size", "eval_batch_size", "epochs", "patience"):
            need(getattr(t, key) >= 1, f"training.{key}", "must be >= 1")
        need(t.precision in (32, 64), "training.precision", "must be 32 or 64")
        need(t.seed >= 0, "training.seed", "must be >= 0")
        if problems:
            raise ConfigError(problems)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: Any, typ: type):
    if not isinstance(raw, str):
        if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, typ):
            return raw
        raw = str(raw)
    text = raw.strip()
    if typ is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
    if typ is float:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
    return text


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        cfg.set(key.strip(), value.strip(), problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg)
    problems: list[str] = []
    for key, value in (overrides or {}).items():
        cfg.set(key, value, problems)
    try:
        cfg.validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def format_config(cfg: RunConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in cfg.items())
