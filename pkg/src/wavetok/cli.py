"""Command-line entry point.

Exit codes: 0 ok, 2 malformed input or I/O failure, 3 invalid arguments
or config, 4 checkpoint/config mismatch, 5 training diverged (NaN).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as wio
from .autodiff import no_grad, precision
from .modwt import WaveletStack, imodwt, modwt
from .trainer import checkpoint as ckpt
from .trainer.config import VARIANTS, ConfigError, TrainConfig, validate_schema
from .trainer.synth import Dataset, train_test
from .trainer.train import TrainingDiverged, compare, evaluate, thread_limit, train

EXIT_OK, EXIT_IO, EXIT_ARGS, EXIT_CHECKPOINT, EXIT_NAN = 0, 2, 3, 4, 5

log = logging.getLogger("wavetok")


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def _tau(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("tau must lie in (0, 1)")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavetok", description="Wavelet-based dynamic tokenization for time series.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decompose", help="MODWT of a signal file into a stack container")
    d.add_argument("--input", required=True, type=Path)
    d.add_argument("--basis", choices=("haar", "db4"), default="db4")
    d.add_argument("--levels", type=_positive, default=4)
    d.add_argument("--output", required=True, type=Path)
    d.add_argument("--invert", action="store_true", help=argparse.SUPPRESS)

    t = sub.add_parser("tokenize", help="anchors, clusters and saliency for one signal")
    t.add_argument("--input", required=True, type=Path)
    t.add_argument("--checkpoint", required=True, type=Path)
    t.add_argument("--tau", type=_tau, default=None)
    t.add_argument("--variant", choices=VARIANTS, default=None)
    t.add_argument("--emit-tokens", action="store_true")
    t.add_argument("--output", required=True, type=Path)

    tr = sub.add_parser("train", help="train one config on its synthetic dataset")
    tr.add_argument("--config", required=True, type=Path)
    tr.add_argument("--data-seed", type=_seed, default=None)
    tr.add_argument("--out-dir", required=True, type=Path)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data-seed", type=_seed, default=None)
    e.add_argument("--output", required=True, type=Path)

    c = sub.add_parser("compare", help="train and evaluate several configs on one dataset")
    c.add_argument("--configs", required=True, nargs="+", type=Path)
    c.add_argument("--data-seed", type=_seed, default=None)
    c.add_argument("--out-dir", required=True, type=Path)
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read_signal(path: Path) -> np.ndarray:
    try:
        return wio.read_signal(path)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from exc
    except wio.SignalFormatError as exc:
        raise CommandError(EXIT_IO, f"{path}: {exc}") from exc


def _write(path: Path, data: bytes | str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            path.write_text(data)
        else:
            path.write_bytes(data)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from exc


def _load_config(path: Path) -> TrainConfig:
    try:
        return TrainConfig.load(path)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from exc
    except ConfigError as exc:
        raise CommandError(EXIT_ARGS, f"{path}: {exc}") from exc


def _load_checkpoint(path: Path) -> ckpt.Checkpoint:
    try:
        return ckpt.load(path)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from exc
    except ckpt.CheckpointFormatError as exc:
        raise CommandError(EXIT_IO, f"{path}: {exc}") from exc


def _with_seed(cfg: TrainConfig, seed: int | None) -> TrainConfig:
    return cfg if seed is None else replace(cfg, data=replace(cfg.data, seed=seed))


def _document(doc: dict, schema: str) -> str:
    validate_schema(doc, schema)
    return wio.dump_json(doc)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_decompose(args) -> int:
    if args.invert:
        try:
            planes = wio.read_stack(args.input, args.levels)
        except OSError as exc:
            raise CommandError(EXIT_IO, f"cannot read {args.input}: {exc.strerror or exc}") from exc
        except wio.SignalFormatError as exc:
            raise CommandError(EXIT_IO, f"{args.input}: {exc}") from exc
        signal = imodwt(WaveletStack.from_array(planes, args.basis), args.basis)
        _write(args.output, wio.encode_rows(signal))
        return EXIT_OK
    x = _read_signal(args.input)
    if x.shape[-1] < 2:
        raise CommandError(EXIT_IO, f"{args.input}: signal needs at least 2 samples")
    stack = modwt(x, args.levels, args.basis)
    _write(args.output, wio.encode_rows(wio.stack_rows(stack.to_array())))
    return EXIT_OK


def cmd_tokenize(args) -> int:
    x = _read_signal(args.input)
    cp = _load_checkpoint(args.checkpoint)
    variant = args.variant or cp.config.variant
    if variant in ("fixed_patch", "fixed_dwt"):
        raise CommandError(EXIT_ARGS, f"variant {variant!r} has no anchors to report")
    if x.shape[0] != cp.channels:
        raise CommandError(EXIT_CHECKPOINT, f"signal has {x.shape[0]} channels, checkpoint expects {cp.channels}")
    try:
        model = cp.build(None if variant == cp.config.variant else variant)
    except ckpt.CheckpointMismatch as exc:
        raise CommandError(EXIT_CHECKPOINT, f"{args.checkpoint}: {exc}") from exc
    tau = cp.config.tau if args.tau is None else args.tau
    if x.shape[-1] < 2:
        raise CommandError(EXIT_IO, f"{args.input}: signal needs at least 2 samples")
    with no_grad(), precision(model.cfg.precision):
        batch = model.tokenize(x[None], tau=tau)
    tokens = batch.tokens.data[0, : batch.counts[0]] if args.emit_tokens else None
    report = wio.TokenReport.build(batch.assignments[0], batch.saliency[0], cp.channels, tau, variant, tokens)
    _write(args.output, _document(report.to_dict(), "token_report.schema.json"))
    return EXIT_OK


def _train_eval(cfg: TrainConfig, train_set: Dataset, test_set: Dataset):
    result = train(cfg, train_set)
    metrics = evaluate(result.model, test_set, result.curves)
    return result, metrics


def cmd_train(args) -> int:
    cfg = _with_seed(_load_config(args.config), args.data_seed)
    train_set, test_set = train_test(cfg.data)
    with thread_limit():
        result, metrics = _train_eval(cfg, train_set, test_set)
    out = args.out_dir
    _write(out / "checkpoint.dywc", ckpt.dumps(result.model))
    _write(out / "metrics.json", _document(metrics.to_dict(with_timing=False), "metrics.schema.json"))
    timing = {"train_seconds": result.wall_clock, "eval_seconds": metrics.wall_clock}
    _write(out / "timing.json", wio.dump_json(timing))
    return EXIT_OK


def cmd_eval(args) -> int:
    cp = _load_checkpoint(args.checkpoint)
    cfg = _with_seed(cp.config, args.data_seed)
    try:
        model = cp.build()
    except ckpt.CheckpointMismatch as exc:
        raise CommandError(EXIT_CHECKPOINT, f"{args.checkpoint}: {exc}") from exc
    _, test_set = train_test(cfg.data)
    if test_set.channels != cp.channels or test_set.classes != cp.classes:
        raise CommandError(EXIT_CHECKPOINT, "checkpoint shape does not match its dataset spec")
    with thread_limit():
        metrics = evaluate(model, test_set)
    _write(args.output, _document(metrics.to_dict(with_timing=False), "metrics.schema.json"))
    _write(args.output.with_suffix(".timing.json"), wio.dump_json({"eval_seconds": metrics.wall_clock}))
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise CommandError(EXIT_ARGS, "--configs needs at least two files")
    configs = [_with_seed(_load_config(p), args.data_seed) for p in args.configs]
    first = configs[0].data
    for path, cfg in zip(args.configs[1:], configs[1:]):
        if cfg.data != first:
            raise CommandError(EXIT_ARGS, f"{path}: data spec differs from {args.configs[0]}; compare needs one shared dataset")
    train_set, test_set = train_test(first)
    with thread_limit():
        table = compare(configs, train_set, test_set)
    out = args.out_dir
    _write(out / "comparison.json", _document(table.to_dict(), "comparison.schema.json"))
    _write(out / "comparison.txt", table.table())
    return EXIT_OK


COMMANDS = {
    "decompose": cmd_decompose,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_ARGS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"wavetok {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"wavetok {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except TrainingDiverged as exc:
        print(f"wavetok {args.command}: training aborted: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
