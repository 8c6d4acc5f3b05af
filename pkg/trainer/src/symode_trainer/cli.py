"""Command line entry points: ``train`` and ``serve``."""
from __future__ import annotations

import argparse
import logging
import sys

from .corpus import CorpusError, load_corpus, load_vocab
from .model import ConfigError, TrainConfig
from .serve import DEFAULT_BATCH, run
from .train import DivergenceError, train

log = logging.getLogger("symode-trainer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symode-trainer",
        description="Train and serve a trajectory-to-equation scorer.",
    )
    parser.add_argument("--log-level", default="warning", help="logging level name")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model on a corpus file")
    p_train.add_argument("--corpus", required=True, help="corpus JSONL path")
    p_train.add_argument("--vocab", required=True, help="vocabulary JSON path")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--loss-csv", required=True, help="loss curve CSV output path")
    defaults = TrainConfig()
    p_train.add_argument("--layers", type=int, default=defaults.layers)
    p_train.add_argument("--heads", type=int, default=defaults.heads)
    p_train.add_argument("--dim", type=int, default=defaults.dim)
    p_train.add_argument("--ffn", type=int, default=defaults.ffn)
    p_train.add_argument("--max-len", type=int, default=defaults.max_len)
    p_train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p_train.add_argument("--lr", type=float, default=defaults.lr)
    p_train.add_argument("--warmup-steps", type=int, default=defaults.warmup_steps)
    p_train.add_argument("--epochs", type=int, default=defaults.epochs)
    p_train.add_argument("--seed", type=int, default=defaults.seed)

    p_serve = sub.add_parser("serve", help="answer scoring requests on stdin")
    p_serve.add_argument("--checkpoint", required=True, help="trained checkpoint path")
    p_serve.add_argument("--corpus", required=True, help="corpus JSONL defining trajectory ids")
    p_serve.add_argument("--batch", type=int, default=DEFAULT_BATCH, help="batched request limit")
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainConfig(
        layers=args.layers,
        heads=args.heads,
        dim=args.dim,
        ffn=args.ffn,
        max_len=args.max_len,
        batch_size=args.batch_size,
        lr=args.lr,
        warmup_steps=args.warmup_steps,
        epochs=args.epochs,
        seed=args.seed,
    )
    vocab = load_vocab(args.vocab)
    records = load_corpus(args.corpus, vocab)
    train(cfg, records, vocab, args.out, args.loss_csv)
    log.info("wrote checkpoint %s", args.out)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    return run(args.checkpoint, args.corpus, batch_limit=args.batch)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "train":
            return cmd_train(args)
        return cmd_serve(args)
    except (ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
