"""Training loop: teacher forcing against two-hot targets.

Batches pair each trajectory's bit-expanded samples with its tokenized
equation, shifted by one position so the model predicts the next item
from the prefix.  Optimization is plain Adam with a linear warm-up to
the configured rate, constant afterwards.

Determinism: model init and batch order derive entirely from the
config seed, so two runs with the same config and corpus produce the
same loss curve on the same machine.  Bitwise equality across BLAS
builds or torch versions is not promised; the reproducibility contract
is per-environment.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Item, Record, Vocab, token_item
from .model import ConfigError, Seq2Seq, TrainConfig, pair_bits, two_hot_loss

log = logging.getLogger("symode-trainer")

CHECKPOINT_FORMAT = "symode-trainer-checkpoint"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training loss stopped being finite."""


def _padded_items(seqs: Sequence[Sequence[Item]], pad: Item) -> tuple[torch.Tensor, ...]:
    """Stack item sequences into (B, L) lo/hi/alpha/beta tensors."""
    length = max(len(s) for s in seqs)
    rows = [list(s) + [pad] * (length - len(s)) for s in seqs]
    lo = torch.tensor([[it.lo for it in r] for r in rows], dtype=torch.long)
    hi = torch.tensor([[it.hi for it in r] for r in rows], dtype=torch.long)
    alpha = torch.tensor([[it.alpha for it in r] for r in rows], dtype=torch.float32)
    beta = torch.tensor([[it.beta for it in r] for r in rows], dtype=torch.float32)
    return lo, hi, alpha, beta


def build_batch(
    records: Sequence[Record],
    indices: Sequence[int],
    vocab: Vocab,
    cfg: TrainConfig,
) -> dict[str, torch.Tensor]:
    """Assemble one teacher-forcing batch from corpus records.

    Returns encoder bit rows, decoder inputs (items without the final
    one), two-hot target rows (items without the first one, spread over
    the vocabulary axis), and the mask of real target positions.
    """
    chosen = [records[i] for i in indices]
    for rec in chosen:
        if len(rec.items) - 1 > cfg.max_len:
            raise ConfigError(
                f"equation of {len(rec.items)} items exceeds max_len {cfg.max_len}: {rec.expr!r}"
            )
    bits = np.stack([pair_bits(rec.t, rec.y) for rec in chosen])
    lo, hi, alpha, beta = _padded_items([rec.items for rec in chosen], token_item(vocab.pad_id))

    lengths = torch.tensor([len(rec.items) for rec in chosen])
    steps = lo.shape[1] - 1
    mask = torch.arange(steps).unsqueeze(0) < (lengths - 1).unsqueeze(1)

    targets = torch.zeros(len(chosen), steps, vocab.size, dtype=torch.float32)
    targets.scatter_add_(-1, lo[:, 1:].unsqueeze(-1), alpha[:, 1:].unsqueeze(-1))
    targets.scatter_add_(-1, hi[:, 1:].unsqueeze(-1), beta[:, 1:].unsqueeze(-1))

    return {
        "bits": torch.from_numpy(bits).to(torch.float32),
        "lo": lo[:, :-1],
        "hi": hi[:, :-1],
        "alpha": alpha[:, :-1],
        "beta": beta[:, :-1],
        "targets": targets,
        "mask": mask,
    }


def train(
    cfg: TrainConfig,
    records: Sequence[Record],
    vocab: Vocab,
    checkpoint_path: str | Path,
    loss_csv_path: str | Path,
) -> Seq2Seq:
    """Train a model on ``records`` and write the checkpoint and loss curve.

    Raises ``ConfigError`` before touching the model if the corpus is
    empty or inconsistent, and ``DivergenceError`` the moment a step
    loss stops being finite.
    """
    if not records:
        raise ConfigError("cannot train on an empty corpus")
    n_grid = len(records[0].y)
    for rec in records:
        if len(rec.y) != n_grid:
            raise ConfigError(
                f"mixed grid sizes in corpus: {len(rec.y)} vs {n_grid} ({rec.expr!r})"
            )
        if len(rec.items) - 1 > cfg.max_len:
            raise ConfigError(
                f"equation of {len(rec.items)} items exceeds max_len {cfg.max_len}: {rec.expr!r}"
            )

    torch.manual_seed(cfg.seed)
    model = Seq2Seq(cfg, vocab.size, n_grid)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: min(1.0, (step + 1) / cfg.warmup_steps)
    )
    rng = np.random.default_rng(cfg.seed)

    loss_csv_path = Path(loss_csv_path)
    loss_csv_path.parent.mkdir(parents=True, exist_ok=True)
    step = 0
    with open(loss_csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "lr", "loss"])
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(records))
            for start in range(0, len(order), cfg.batch_size):
                batch = build_batch(records, order[start : start + cfg.batch_size], vocab, cfg)
                logits = model(
                    batch["bits"], batch["lo"], batch["hi"], batch["alpha"], batch["beta"]
                )
                loss = two_hot_loss(logits, batch["targets"], batch["mask"])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                schedule.step()
                step += 1
                value = float(loss.item())
                writer.writerow([step, epoch, f"{schedule.get_last_lr()[0]:.8g}", f"{value:.8g}"])
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"loss {value} at step {step} (epoch {epoch}, "
                        f"lr {schedule.get_last_lr()[0]:.3g}); stopping before the "
                        "checkpoint is poisoned"
                    )
            if (epoch + 1) % max(1, cfg.epochs // 10) == 0:
                log.info("epoch %d/%d: loss %.6f", epoch + 1, cfg.epochs, value)

    save_checkpoint(model, cfg, vocab, n_grid, checkpoint_path)
    return model


def save_checkpoint(
    model: Seq2Seq,
    cfg: TrainConfig,
    vocab: Vocab,
    n_grid: int,
    path: str | Path,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(cfg),
            "vocab": {
                "tokens": list(vocab.tokens),
                "grid_offset": vocab.grid_offset,
                "grid": list(vocab.grid),
            },
            "n_grid": n_grid,
            "state": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[Seq2Seq, TrainConfig, Vocab, int]:
    """Restore a model in eval mode from a checkpoint file."""
    raw = torch.load(path, map_location="cpu", weights_only=True)
    if raw.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a trainer checkpoint: format={raw.get('format')!r}")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version: {raw.get('version')!r}")
    cfg = TrainConfig(**raw["config"])
    v = raw["vocab"]
    vocab = Vocab(
        tokens=tuple(v["tokens"]),
        grid_offset=int(v["grid_offset"]),
        grid=tuple(float(g) for g in v["grid"]),
    )
    model = Seq2Seq(cfg, vocab.size, int(raw["n_grid"]))
    model.load_state_dict(raw["state"])
    model.eval()
    return model, cfg, vocab, int(raw["n_grid"])
