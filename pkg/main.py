"""
Command-line entry point for the digit CNN.

    python main.py train   --data train.csv --out model.dcnn --metrics metrics.csv
    python main.py eval    --model model.dcnn --data train.csv --seed 0 --confusion cm.csv
    python main.py predict --model model.dcnn --data test.csv --out predictions.csv
    python main.py inspect --model model.dcnn
    python main.py show    --data train.csv --count 16 --out digits.pgm

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

import data
import metrics
from config import DEFAULT_TRAIN_COUNT, DEFAULT_VAL_COUNT, RuntimeSettings, TrainConfig, configure_logging, get_logger
from errors import DataError, DigitCnnError, EngineError, InvalidConfig, UsageError
from model import build_paper_model, format_shape, load_model, save_model
from training import evaluate, fit

log = get_logger("CLI")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as UsageError instead of exiting with 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ============================================================================
# Parser
# ============================================================================

def build_parser(settings: RuntimeSettings) -> argparse.ArgumentParser:
    parser = _Parser(prog="digit-cnn", description="Train and run the digit-recognition CNN")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,eval,predict,inspect,show}")

    def data_flag(p):
        p.add_argument("--data", default=settings.data_path, required=settings.data_path is None,
                       help="CSV file (DIGIT_CNN_DATA)")

    def split_flags(p):
        p.add_argument("--seed", type=int, default=settings.seed)
        p.add_argument("--train-count", type=int, default=DEFAULT_TRAIN_COUNT)
        p.add_argument("--val-count", type=int, default=DEFAULT_VAL_COUNT)
        p.add_argument("--sequential-split", action="store_true", help="Split in file order, no shuffle")

    def threads_flag(p):
        p.add_argument("--threads", type=int, default=None, help="Worker threads (DIGIT_CNN_THREADS)")

    train = sub.add_parser("train", help="Train the network and write model + metrics")
    data_flag(train)
    train.add_argument("--epochs", type=int, default=15)
    train.add_argument("--batch-size", type=int, default=64)
    train.add_argument("--lr", type=float, default=0.001)
    train.add_argument("--dropout", type=float, default=0.3)
    train.add_argument("--kernel", type=int, default=3)
    split_flags(train)
    threads_flag(train)
    train.add_argument("--out", required=True, help="Model file to write")
    train.add_argument("--metrics", required=True, help="Per-epoch metrics CSV to write")

    ev = sub.add_parser("eval", help="Evaluate a model on the validation slice")
    ev.add_argument("--model", required=True)
    data_flag(ev)
    split_flags(ev)
    threads_flag(ev)
    ev.add_argument("--confusion", default=None, help="Confusion matrix CSV to write")

    pr = sub.add_parser("predict", help="Write ImageId,Label predictions for a CSV")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    threads_flag(pr)

    ins = sub.add_parser("inspect", help="Print the layer / output shape table")
    ins.add_argument("--model", required=True)

    show = sub.add_parser("show", help="Export a PGM mosaic of dataset images")
    data_flag(show)
    show.add_argument("--count", type=int, default=16)
    show.add_argument("--columns", type=int, default=8)
    show.add_argument("--out", required=True)

    return parser


# ============================================================================
# Helpers
# ============================================================================

def _is_labeled(path: Path) -> bool:
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        first = f.readline()
    return first.split(",")[0].strip().lower() == data.LABEL_COLUMN


def _read_data(path: str, labeled: Optional[bool] = None) -> data.LabeledDataset:
    p = Path(path)
    try:
        if labeled is None:
            labeled = _is_labeled(p)
        return data.load_csv(p, labeled=labeled)
    except OSError as e:
        raise DataError(f"Cannot read data file {path}: {e}") from e


def _read_model(path: str):
    try:
        return load_model(path)
    except OSError as e:
        raise EngineError(f"Cannot read model file {path}: {e}") from e


def _threads(args, settings: RuntimeSettings) -> int:
    return args.threads if args.threads is not None else settings.threads


def _config(**values) -> TrainConfig:
    """Out-of-range flag values are usage errors."""
    try:
        return TrainConfig.validated(**values)
    except InvalidConfig as e:
        raise UsageError(str(e)) from e


# ============================================================================
# Commands
# ============================================================================

def cmd_train(args, settings: RuntimeSettings) -> int:
    cfg = _config(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        dropout_rate=args.dropout,
        kernel_size=args.kernel,
        seed=args.seed,
        train_count=args.train_count,
        val_count=args.val_count,
        sequential_split=args.sequential_split,
        threads=_threads(args, settings),
    )
    ds = data.normalize(_read_data(args.data, labeled=True))
    model = build_paper_model(cfg.seed, kernel_size=cfg.kernel_size, dropout_rate=cfg.dropout_rate)
    log.info(f"model has {model.parameter_count():,} trainable parameters")

    history = fit(model, ds, cfg)
    save_model(model, args.out)
    metrics.write_history(history, args.metrics)
    if history:
        final = history[-1].val_accuracy
        print(f"Final validation accuracy: {metrics.format_percent(final)} ({final:.6f})")
    return 0


def cmd_eval(args, settings: RuntimeSettings) -> int:
    cfg = _config(
        seed=args.seed,
        train_count=args.train_count,
        val_count=args.val_count,
        sequential_split=args.sequential_split,
        threads=_threads(args, settings),
    )
    model = _read_model(args.model)
    ds = data.normalize(_read_data(args.data, labeled=True))
    parts = data.split(ds, cfg.train_count, cfg.val_count, cfg.seed, shuffle=not cfg.sequential_split)

    result = evaluate(model, parts.val, cfg)
    cm = metrics.confusion_matrix(result.predictions, parts.val.labels)
    log.info(f"{cm.trace} of {cm.total} validation images classified correctly")
    for digit, correct, total in cm.class_summary():
        log.info(f"digit {digit}: {correct} out of {total}")
    if args.confusion:
        cm.to_csv(args.confusion)
        log.info(f"confusion matrix written to {args.confusion}")
    print(f"Validation accuracy: {metrics.format_percent(result.accuracy)} ({result.accuracy:.6f})")
    return 0


def cmd_predict(args, settings: RuntimeSettings) -> int:
    model = _read_model(args.model)
    ds = _read_data(args.data)
    images = ds.images if ds.normalized else data.normalize(ds).images
    labels = model.predict(images, threads=_threads(args, settings)) if len(ds) else np.zeros(0, dtype=np.int64)
    out = pd.DataFrame({"ImageId": np.arange(1, len(labels) + 1), "Label": labels})
    out.to_csv(args.out, index=False, lineterminator="\n")
    log.info(f"wrote {len(out)} predictions to {args.out}")
    return 0


def cmd_inspect(args, settings: RuntimeSettings) -> int:
    model = _read_model(args.model)
    rows = model.shape_table()
    width = max(len(name) for name, _ in rows) + 4
    print(f"{'Layers':<{width}}Output Shape")
    for name, shape in rows:
        print(f"{name:<{width}}{format_shape(shape)}")
    print(f"Total params: {model.parameter_count():,}")
    return 0


def cmd_show(args, settings: RuntimeSettings) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    if args.columns < 1:
        raise UsageError("--columns must be at least 1")
    ds = _read_data(args.data)
    shown = ds.subset(np.arange(min(args.count, len(ds))))
    data.export_pgm(shown.images, args.out, columns=args.columns)
    if shown.labels is not None:
        log.info("labels: " + " ".join(str(int(v)) for v in shown.labels))
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "inspect": cmd_inspect,
    "show": cmd_show,
}


def run_cli(argv: List[str]) -> int:
    try:
        settings = RuntimeSettings.from_env()
    except DigitCnnError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    configure_logging(settings.log_level)

    try:
        args = build_parser(settings).parse_args(argv)
    except UsageError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        return COMMANDS[args.command](args, settings)
    except DigitCnnError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(run_cli(sys.argv[1:]))
