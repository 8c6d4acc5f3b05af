"""Shared fixtures: a real vocabulary, a tiny synthetic corpus, and a
trained micro-checkpoint reused by the server tests.

The vocabulary comes from the data factory CLI so compatibility drift
shows up here first.  The corpus records are hand-written: the trainer
never checks that y actually solves anything, so smooth made-up curves
keep the suite fast.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import pytest

from symode_trainer.corpus import Vocab, load_corpus, load_vocab
from symode_trainer.model import TrainConfig
from symode_trainer.train import train

N_GRID = 16
T_END = 4.0

MINI_EXPRS = [
    ("mul C0 y", "mul 2.5 y"),
    ("add y neg C0", "add y neg 0.75"),
    ("mul C0 pow y 2", "mul -1.25 pow y 2"),
    ("sin y", "sin y"),
]


@pytest.fixture(scope="session")
def vocab_path(tmp_path_factory) -> Path:
    from symode.cli import main as symode_main

    path = tmp_path_factory.mktemp("vocab") / "vocab.json"
    assert symode_main(["encode", "--emit-vocab", str(path)]) == 0
    return path


@pytest.fixture(scope="session")
def vocab(vocab_path) -> Vocab:
    return load_vocab(vocab_path)


def write_mini_corpus(path: Path, n_grid: int = N_GRID) -> None:
    header = {
        "format": "symode-corpus",
        "version": 1,
        "kind": "corpus",
        "seed": 0,
        "config": {},
        "workers": 1,
    }
    t = np.arange(n_grid) * (T_END / (n_grid - 1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for k, (skeleton, expr) in enumerate(MINI_EXPRS):
            y = np.cos((k + 1) * t) + 0.1 * k
            rec = {
                "skeleton": skeleton,
                "expr": expr,
                "constants": [],
                "y0": float(y[0]),
                "t_end": T_END,
                "n_grid": n_grid,
                "encoding": "b64le",
                "y": base64.b64encode(np.ascontiguousarray(y, dtype="<f8").tobytes()).decode(),
                "qc": "passed",
                "provenance": {"seed": 0, "stream": k, "index": k},
            }
            fh.write(json.dumps(rec) + "\n")


@pytest.fixture(scope="session")
def mini_corpus_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("corpus") / "mini.jsonl"
    write_mini_corpus(path)
    return path


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        layers=1,
        heads=2,
        dim=16,
        ffn=32,
        max_len=24,
        batch_size=4,
        lr=1e-3,
        warmup_steps=10,
        epochs=30,
        seed=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def trained(tmp_path_factory, mini_corpus_path, vocab):
    """A micro-model fitted to the mini corpus: (checkpoint, corpus, csv)."""
    out = tmp_path_factory.mktemp("trained")
    ckpt = out / "model.pt"
    csv_path = out / "loss.csv"
    records = load_corpus(mini_corpus_path, vocab)
    train(tiny_config(epochs=600, lr=2e-3), records, vocab, ckpt, csv_path)
    return ckpt, mini_corpus_path, csv_path
