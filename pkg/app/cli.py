"""
TailNet command-line entry point.

Usage:
    tailnet synth     --out events.csv [--sessions 5000 --items 500 --zipf 1.2 --mean-len 6]
    tailnet prepare   --input events.csv --out data.tlds [--head-fraction 0.2 --test-days 1]
    tailnet train     --data data.tlds --out model.tlnt [--d 100 --epochs 30 --no-pm]
    tailnet eval      --data data.tlds [--model model.tlnt] --method tailnet,pop [--k 5,10,15,20]
                      [--out report.csv|report.xlsx]
    tailnet recommend --model model.tlnt --session "itemA,itemB" [--k 20]

Every subcommand accepts --config <file> (JSON or key = value lines) and
--threads N (0 = all cores).

Exit codes: 0 success, 1 internal error, 2 user / input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Callable, Sequence

from app import analysis, parser, reporter
from app.config import SELECTION_K, RunConfig
from app.errors import EXIT_INTERNAL, EXIT_OK, EXIT_USER, EXIT_USER_ERRORS, ConfigError
from app.ingest import load_dataset, preprocess, save_dataset, summarize
from app.synthetic import gen_synthetic
from app.train import EpochStats, TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)


def _configure_logging() -> None:
    logging.basicConfig(
        level=os.environ.get("LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _resolve(args: argparse.Namespace, **overrides) -> RunConfig:
    return RunConfig.resolve(args.config, threads=args.threads, **overrides)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        sessions=args.sessions,
        items=args.items,
        zipf=args.zipf,
        mean_len=args.mean_len,
        seed=args.seed,
    )
    print(f"Generating {cfg.sessions:,} sessions over {cfg.items:,} items ...")
    events = gen_synthetic(cfg.sessions, cfg.items, cfg.zipf, cfg.mean_len, cfg.seed)
    provenance = {
        "sessions": cfg.sessions,
        "items": cfg.items,
        "zipf": cfg.zipf,
        "mean_len": cfg.mean_len,
        "seed": cfg.seed,
        **cfg.provenance(),
    }
    parser.write_events_csv(events, args.out, header_comment=provenance)
    print(f"  Wrote {len(events):,} events to {args.out}")
    return EXIT_OK


def cmd_prepare(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        min_item_support=args.min_item_support,
        min_session_len=args.min_session_len,
        max_session_len=args.max_session_len,
        head_fraction=args.head_fraction,
        test_days=args.test_days,
    )
    print(f"Loading {args.input} ...")
    df, malformed = parser.load_frame(args.input)
    print(f"  Loaded {len(df):,} events | malformed rows skipped: {malformed}")

    dataset = preprocess(df, **cfg.ingest_settings())
    save_dataset(dataset, args.out, {**cfg.provenance(), **cfg.ingest_settings()})

    print(f"\nDataset saved to {args.out}")
    for line in summarize(dataset).lines():
        print(f"  {line}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        d=args.d,
        lr=args.lr,
        batch=args.batch,
        epochs=args.epochs,
        l2=args.l2,
        seed=args.seed,
        patience=args.patience,
        use_pm=args.use_pm,
    )
    config = TrainConfig(
        d=cfg.d,
        learning_rate=cfg.lr,
        batch_size=cfg.batch,
        epochs=cfg.epochs,
        l2=cfg.l2,
        seed=cfg.seed,
        use_pm=cfg.use_pm,
        early_stop_patience=cfg.patience,
    )
    dataset = load_dataset(args.data)

    def emit(stats: EpochStats) -> None:
        print(f"{stats.epoch},{stats.train_loss:.6f},{stats.valid_mrr:.4f}", flush=True)

    print(f"epoch,train_loss,valid_mrr@{SELECTION_K}")
    checkpoint, _ = train(dataset, config, threads=cfg.worker_count, on_epoch=emit)
    save_checkpoint(checkpoint, args.out)
    logger.info(
        "Saved %s (epoch %d, valid MRR@%d %.2f)",
        args.out, checkpoint.epoch, SELECTION_K, checkpoint.best_valid_mrr,
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, ks=args.k)
    methods = analysis.parse_methods(args.method)
    if analysis.MODEL_METHODS.intersection(methods) and not args.model:
        raise ConfigError(f"--model is required for {', '.join(sorted(analysis.MODEL_METHODS))}")

    dataset = load_dataset(args.data)
    checkpoint = load_checkpoint(args.model) if args.model else None
    frame = analysis.compare(methods, dataset, checkpoint, ks=cfg.ks, threads=cfg.worker_count)

    if args.out:
        settings = {
            **cfg.provenance(),
            "methods": ",".join(methods),
            "ks": ",".join(map(str, cfg.ks)),
        }
        if checkpoint is not None:
            settings.update({f"train_{k}": v for k, v in checkpoint.config.to_dict().items()})
        path = reporter.save_report(args.out, frame, settings)
        logger.info("Report written to %s", path)
    print(reporter.format_table(frame))
    return EXIT_OK


def cmd_recommend(args: argparse.Namespace) -> int:
    _resolve(args)
    if args.k < 1:
        raise ConfigError(f"--k must be >= 1, got {args.k}")
    checkpoint = load_checkpoint(args.model)
    item_ids = [part.strip() for part in args.session.split(",") if part.strip()]
    result = analysis.recommend_session(checkpoint, item_ids, args.k)
    for line in result.lines():
        print(line)
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "recommend": cmd_recommend,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON or key = value settings file")
    common.add_argument(
        "--threads", type=int, default=None,
        help="Workers: threads for scoring, processes for training (0 = all cores)",
    )

    p = argparse.ArgumentParser(prog="tailnet", description="Long-tail session recommender")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="Generate a synthetic click log")
    s.add_argument("--out", required=True, help="Output events CSV")
    s.add_argument("--sessions", type=int, default=None)
    s.add_argument("--items", type=int, default=None)
    s.add_argument("--zipf", type=float, default=None, help="Zipf exponent of item popularity")
    s.add_argument("--mean-len", type=float, default=None, help="Mean session length")
    s.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("prepare", parents=[common], help="Preprocess a click log into a dataset")
    s.add_argument("--input", required=True, help="Events CSV (session_id,timestamp,item_id)")
    s.add_argument("--out", required=True, help="Output dataset file")
    s.add_argument("--min-item-support", type=int, default=None)
    s.add_argument("--min-session-len", type=int, default=None)
    s.add_argument("--max-session-len", type=int, default=None)
    s.add_argument("--head-fraction", type=float, default=None)
    s.add_argument("--test-days", type=float, default=None)

    s = sub.add_parser("train", parents=[common], help="Train TailNet")
    s.add_argument("--data", required=True, help="Dataset file")
    s.add_argument("--out", required=True, help="Output checkpoint")
    s.add_argument("--d", type=int, default=None, help="Embedding / hidden size")
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--l2", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--patience", type=int, default=None, help="Early-stop patience in epochs")
    s.add_argument(
        "--no-pm", dest="use_pm", action="store_const", const=False, default=None,
        help="Train without the preference mechanism",
    )

    s = sub.add_parser("eval", parents=[common], help="Evaluate methods on the test split")
    s.add_argument("--data", required=True, help="Dataset file")
    s.add_argument("--model", default=None, help="Checkpoint (needed for tailnet methods)")
    s.add_argument("--method", default="tailnet", help="Comma separated methods")
    s.add_argument("--k", default=None, help="Comma separated cut-offs, e.g. 5,10,15,20")
    s.add_argument("--out", default=None, help="Report path (.csv or .xlsx)")

    s = sub.add_parser("recommend", parents=[common], help="Recommend for one session")
    s.add_argument("--model", required=True, help="Checkpoint")
    s.add_argument("--session", required=True, help="Comma separated item ids, oldest first")
    s.add_argument("--k", type=int, default=SELECTION_K)

    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        return COMMANDS[args.command](args)
    except EXIT_USER_ERRORS as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:
        logger.exception("Internal error in %s: %s", args.command, exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
