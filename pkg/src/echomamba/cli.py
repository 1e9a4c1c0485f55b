"""Command-line entry point: ``echomamba {ingest,train,eval,bench,gradcheck}``.

Every command reads the same run configuration (``--config``) and accepts the
same override flags.  Exit codes: 0 success, 1 invalid configuration or input
data, 2 runtime failure, 3 verification-suite failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import ExitStack
from pathlib import Path

from . import tensor as T
from .config import ConfigError, RunConfig, format_config, load_config
from .data import DataError, build_sequences, ingest, k_core_filter, load_cache, save_cache
from .evaluate import bench_efficiency, evaluate, rank_targets
from .model import EchoMambaModel, ModelConfig
from .train import TrainConfig, TrainState, Adam, load_checkpoint, rng_streams, save_checkpoint, train

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_INVALID", "EXIT_RUNTIME", "EXIT_VERIFY"]

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat 'section.key = value' config file")
    common.add_argument("--seed", type=int, help="override training.seed")
    common.add_argument("--no-filter", action="store_true", help="bypass the spectral filter layer")
    common.add_argument("--unidirectional", action="store_true", help="forward Mamba branch only")
    common.add_argument("--euler-discretization", action="store_true",
                        help="use Euler instead of zero-order-hold discretization")
    common.add_argument("--mask-seen", action="store_true",
                        help="exclude a user's earlier items from ranking")
    common.add_argument("--precision", type=int, choices=(32, 64), help="override training.precision")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")

    parser = argparse.ArgumentParser(prog="echomamba", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse, filter and cache a dataset; print stats")
    p = sub.add_parser("train", parents=[common], help="train and write a log and checkpoint")
    p.add_argument("--resume", action="store_true", help="continue from output.checkpoint_path")
    p = sub.add_parser("eval", parents=[common], help="print an EvalReport for a checkpoint")
    p.add_argument("--split", choices=("validation", "test"), default="test")
    p.add_argument("--untrained", action="store_true",
                   help="score with a freshly initialized model instead of the checkpoint")
    p = sub.add_parser("bench", parents=[common], help="print an efficiency report")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--scan-length", type=int, default=2048)
    sub.add_parser("gradcheck", parents=[common], help="run the 64-bit finite-difference suite")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"--set {item!r}: expected KEY=VALUE"])
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["training.seed"] = args.seed
    if args.precision is not None:
        out["training.precision"] = args.precision
    if args.no_filter:
        out["model.filter_enabled"] = False
    if args.unidirectional:
        out["model.bidirectional"] = False
    if args.euler_discretization:
        out["model.discretization"] = "euler"
    if args.mask_seen:
        out["training.mask_seen"] = True
    return out


def _model_config(cfg: RunConfig, n_items: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(n_items=n_items, dim=m.dim, d_state=m.d_state, d_conv=m.d_conv,
                       expand=m.expand, n_layers=m.n_layers, max_len=cfg.effective_max_len(),
                       dropout=m.dropout,
                       filter_dropout=None if m.filter_dropout < 0 else m.filter_dropout,
                       filter_enabled=m.filter_enabled, filter_per_layer=m.filter_per_layer,
                       bidirectional=m.bidirectional, discretization=m.discretization,
                       combine=m.combine)


def _train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.training
    return TrainConfig(lr=t.lr, batch_size=t.batch_size, eval_batch_size=t.eval_batch_size,
                       epochs=t.epochs, patience=t.patience, seed=t.seed,
                       all_prefixes=t.all_prefixes, mask_seen=t.mask_seen)


def _build_dataset(cfg: RunConfig):
    d = cfg.dataset
    if not d.path:
        raise ConfigError(["dataset.path: required"])
    return build_sequences(k_core_filter(ingest(d.path, d.format), d.k_core, d.k_core_mode))


def _dataset(cfg: RunConfig):
    if cfg.dataset.cache and Path(cfg.dataset.cache).is_file():
        return load_cache(cfg.dataset.cache)
    return _build_dataset(cfg)


def cmd_ingest(cfg: RunConfig, args, out) -> int:
    ds = _build_dataset(cfg)
    if cfg.dataset.cache:
        save_cache(ds, cfg.dataset.cache)
    out.write(json.dumps(ds.stats()) + "\n")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args, out) -> int:
    ds = _dataset(cfg)
    tcfg = _train_config(cfg)
    ckpt = cfg.output.checkpoint_path
    if args.resume and ckpt and Path(ckpt).is_file():
        model, optimizer, state, streams, _ = load_checkpoint(ckpt)
        if model.cfg != _model_config(cfg, ds.n_items):
            raise ConfigError([f"output.checkpoint_path: {ckpt} was trained with a different "
                               "model configuration"])
    else:
        streams = rng_streams(tcfg.seed)
        model = EchoMambaModel(_model_config(cfg, ds.n_items), streams["init"])
        optimizer = Adam(model.parameters(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
        state = TrainState()
    with ExitStack() as stack:
        if cfg.output.log_path:
            mode = "a" if args.resume else "w"
            log = stack.enter_context(open(cfg.output.log_path, mode, encoding="utf-8"))
        else:
            log = out
        for line in format_config(cfg).splitlines():
            log.write(f"# {line}\n")
        log.flush()
        # one epoch per call so a checkpoint lands after every epoch
        while True:
            state = train(model, ds, tcfg, streams, log, optimizer, state, max_epochs=1,
                          timing=cfg.output.log_timing)
            finished = state.epoch >= tcfg.epochs or state.bad_epochs >= tcfg.patience
            if ckpt:
                save_checkpoint(ckpt, model, optimizer, state, streams, tcfg)
            if finished:
                break
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args, out) -> int:
    ds = _dataset(cfg)
    if args.untrained:
        model = EchoMambaModel(_model_config(cfg, ds.n_items), rng_streams(cfg.training.seed)["init"])
    else:
        ckpt = cfg.output.checkpoint_path
        if not ckpt or not Path(ckpt).is_file():
            raise FileNotFoundError(f"checkpoint not found: {ckpt or '(output.checkpoint_path unset)'}")
        model = load_checkpoint(ckpt)[0]  # also restores the checkpoint's precision
        if model.cfg.n_items != ds.n_items:
            raise ConfigError([f"output.checkpoint_path: checkpoint has {model.cfg.n_items} items, "
                               f"dataset has {ds.n_items}"])
    t = cfg.training
    report = evaluate(model, ds, args.split, 10, t.eval_batch_size, t.mask_seen)
    out.write(report.to_json() + "\n")
    if cfg.output.ranks_csv:
        ranks = rank_targets(model, ds, args.split, t.eval_batch_size, t.mask_seen)
        with open(cfg.output.ranks_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "rank"])
            writer.writerows(zip(ds.user_ids, ranks.tolist()))
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args, out) -> int:
    ds = _dataset(cfg)
    tcfg = _train_config(cfg)
    model = EchoMambaModel(_model_config(cfg, ds.n_items), rng_streams(tcfg.seed)["init"])
    report = bench_efficiency(model, ds, tcfg, repeats=args.repeats, scan_length=args.scan_length)
    out.write(json.dumps(report) + "\n")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args, out) -> int:
    from .gradcheck import run_suite

    def report(res):
        status = "PASS" if res.passed else "FAIL"
        out.write(f"{status} {res.name:<32} rel_err={res.rel_error:.3e} "
                  f"values={res.n_values} {res.seconds:.2f}s\n")
        out.flush()

    results = run_suite(cfg.training.seed, report)
    failed = [r.name for r in results if not r.passed]
    out.write(f"{len(results) - len(failed)}/{len(results)} checks passed\n")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
            "gradcheck": cmd_gradcheck}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        T.set_precision(cfg.training.precision)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
