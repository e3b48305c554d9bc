"""Command-line entry point.

Commands: train, eval, predict, synth, gradcheck.  Every failure ends with a
single-line JSON record on stderr and one of the exit codes below.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, describe, load_config
from .evaluator import evaluate, write_report
from .fusion import predict, probabilities
from .pose_io import ManifestError, PoseFormatError, load_clip, load_manifest, load_split, sample_window
from .synth import SynthSpec, generate
from .tensor import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class GradCheckError(FloatingPointError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with dotted keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable), e.g. --set gcn.width=8")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="BLAS thread limit; 1 gives bit-reproducible runs")
    p.add_argument("--out", help="output directory (train, synth) or report file (eval)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcnbert", description="Pose-based isolated sign classifier.")
    parser.add_argument("--version", action="version", version=f"gcnbert {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on a dataset directory or manifest")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory containing manifest.json")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("predict", help="rank glosses for one keypoint clip")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="clip document or per-frame directory")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--frame-width", type=float)
    p.add_argument("--frame-height", type=float)

    p = sub.add_parser("synth", help="write a synthetic gloss dataset")
    _common(p)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.02)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer at toy size")
    _common(p)
    p.add_argument("--threshold", type=float, default=1e-4)

    p = sub.add_parser("config", help="list every config key with its default")
    _common(p)
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    config = load_config(args.config)
    if args.set:
        values = config.to_dict()
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            values[key] = _parse_value(value)
        config = RunConfig.from_dict(values)
    if args.seed is not None:
        config = config.override(seed=args.seed)
    return config


def _need_dir(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p}: no such file or directory")
    return p


def cmd_train(args) -> int:
    from .trainer import train

    config = resolve_config(args)
    manifest = load_manifest(_need_dir(args.data))
    if args.out is None:
        raise UsageError("train needs --out")

    def show(record):
        print(json.dumps(record), flush=True)

    ckpt = train(manifest, config, out_dir=args.out, on_epoch=show)
    print(json.dumps({"done": True, "out": str(args.out), "epochs": ckpt.epoch,
                      "best_val_top1": ckpt.best_val_top1}))
    return EXIT_OK


def _load_model(path):
    from .trainer import model_from_checkpoint

    ckpt = load_checkpoint(path)
    model, config = model_from_checkpoint(ckpt)
    return ckpt, model, config


def cmd_eval(args) -> int:
    ckpt, model, config = _load_model(args.checkpoint)
    manifest = load_manifest(_need_dir(args.data), vocabulary=ckpt.vocabulary)
    if manifest.num_classes != model.num_classes:
        raise DataError(f"checkpoint has {model.num_classes} classes, data has {manifest.num_classes}")
    samples = load_split(manifest, args.split)
    report = evaluate(model, samples, manifest.vocabulary, config.window, split=args.split)
    report.config = config.to_dict()
    print(report.table())
    if args.out:
        write_report(report, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt, model, config = _load_model(args.checkpoint)
    g = model.num_classes
    if not 1 <= args.k <= g:
        raise UsageError(f"-k must lie in [1, {g}], got {args.k}")
    frames = load_clip(args.clip, args.frame_width, args.frame_height)
    window = sample_window(frames, "eval", config.window)
    logits = model.logits(window[None].astype(model.dtype))[0]
    probs = probabilities(logits)
    for c in predict(logits, args.k):
        print(f"{ckpt.vocabulary[c]}\t{probs[c]:.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.out is None:
        raise UsageError("synth needs --out")
    spec = SynthSpec(class_count=args.classes, samples_per_class=args.per_class,
                     frame_count=args.frames, noise_sigma=args.noise,
                     seed=args.seed if args.seed is not None else 0)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = generate(spec, args.out)
    print(json.dumps({"out": str(args.out), "classes": manifest.num_classes, "splits": manifest.sizes()}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    config = resolve_config(args)
    results = run_gradcheck(config, seed=config.seed)
    failed = []
    for r in results:
        status = "ok" if r.passed(args.threshold) else "FAIL"
        print(f"{r.component:22s} max_rel_err={r.max_error:.3e}  {status}")
        for name, err in r.errors.items():
            print(f"    {name:34s} {err:.3e}")
        if not r.passed(args.threshold):
            failed.append(r.component)
    if failed:
        raise GradCheckError(f"gradient check above {args.threshold:g} in: {', '.join(failed)}")
    return EXIT_OK


def cmd_config(args) -> int:
    config = resolve_config(args)
    values = config.to_dict()
    for key, default, doc in describe():
        print(f"{key:26s} {json.dumps(values[key]):>10s}  (default {json.dumps(default)})  {doc}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "synth": cmd_synth,
            "gradcheck": cmd_gradcheck, "config": cmd_config}


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limit = contextlib.nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            return _fail(EXIT_USAGE, "usage", "--threads must be positive")
        from threadpoolctl import threadpool_limits
        limit = threadpool_limits(limits=args.threads)
    try:
        with limit:
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (FileNotFoundError, NotADirectoryError, PoseFormatError, ManifestError,
            CheckpointError, ShapeError, DataError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except FloatingPointError as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
