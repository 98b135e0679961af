"""``serlct`` command line: synth, features, train, eval, inspect.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric abort during training.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt_io
from .checkpoint import CheckpointError
from .config import RunConfig
from .data import ManifestError, make_synthetic_dataset
from .features import WavError
from .model import PRESETS, ModelConfig, apply_preset, build_model, parameter_count
from .runner import eval_run, features_summary, model_from_checkpoint, train_run, write_report
from .tensor import ConfigError
from .training import NumericAbort

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--preset", choices=sorted(PRESETS), help="ablation preset")
    p.add_argument("--seed", type=int, help="training/initialisation seed")
    p.add_argument("--device-threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    p.add_argument("--out", help="output directory")
    p.add_argument("--manifest", help="dataset manifest CSV (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="serlct", description="Speech emotion recognition with T-Sa and LCT blocks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic 4-class corpus and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--utterances", type=int, default=32)
    p.add_argument("--duration", type=float, default=1.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("features", help="extract and cache MFCC segments per split")
    _common(p)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="continue from this checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--acc-as-precision", action="store_true")
    p.add_argument("--out")
    p.add_argument("--device-threads", type=int, default=None)

    p = sub.add_parser("inspect", help="parameter breakdown of a checkpoint or config")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--out")
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.preset:
        cfg.preset = args.preset
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.manifest:
        cfg.manifest = args.manifest
    if getattr(args, "epochs", None):
        cfg.train.epochs = args.epochs
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    manifest = make_synthetic_dataset(args.out, args.utterances, duration_s=args.duration, seed=args.seed)
    print(manifest)
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _run_config(args)
    summary = features_summary(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "features_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    cfg.save(Path(cfg.out_dir) / "config.json")
    result = train_run(cfg, resume=args.resume)
    print(json.dumps(result))
    return EXIT_OK


def cmd_eval(args) -> int:
    report = eval_run(args.checkpoint, args.manifest, args.split, args.acc_as_precision)
    out = args.out or str(Path(args.checkpoint).parent / f"eval-{args.split}")
    write_report(report, out)
    print(report.summary())
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.checkpoint:
        model = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    else:
        cfg = RunConfig.load(args.config).resolved_model() if args.config else ModelConfig()
        if args.preset:
            cfg = apply_preset(cfg, args.preset)
        model = build_model(cfg)
    total, breakdown = parameter_count(model, depth=args.depth)
    width = max(len(k) for k in breakdown)
    for name, n in breakdown.items():
        print(f"{name:<{width}}  {n:>10,}")
    print(f"{'total':<{width}}  {total:>10,}")
    payload = {"total": total, "modules": breakdown}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "parameters.json").write_text(json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "features": cmd_features, "train": cmd_train,
            "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "device_threads", None)
    limit = threadpool_limits(limits=threads) if threads else contextlib.nullcontext()
    try:
        with limit:
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ManifestError as exc:
        print("data error:", file=sys.stderr)
        for line in exc.errors:
            print(f"  {line}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, WavError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
