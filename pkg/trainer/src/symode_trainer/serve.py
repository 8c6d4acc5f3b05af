"""Line-delimited JSON scorer server over stdin and stdout.

Protocol version 1.  On startup the server prints a greeting
``{"v": 1, "ready": true, "batch": B}`` advertising how many prefixes
one batched request may carry, then answers one line per line:

  {"v": 1, "traj_id": 3, "prefix": [{"tok": 7}, ...]}
      -> {"v": 1, "logits": [...]}
  {"v": 1, "batch": [<single requests>]}
      -> {"v": 1, "logits_batch": [[...], ...]}

Anything the server cannot honour (unknown version, malformed frame,
out-of-range trajectory) gets an error frame ``{"v": 1, "error": ...}``
on the same line; the server never invents logits and never dies over a
bad frame.  End of input ends the process cleanly.

Trajectory ids index the corpus file given at startup, in record
order.  Encoder memory for every trajectory is computed once up front,
so each request costs one decoder pass.
"""
from __future__ import annotations

import json
import logging
import sys
from typing import IO, Sequence

import numpy as np
import torch

from .corpus import CorpusError, Item, Vocab, load_corpus, token_item, wire_to_items
from .model import Seq2Seq, pair_bits
from .train import _padded_items, load_checkpoint

log = logging.getLogger("symode-trainer")

PROTOCOL_VERSION = 1
DEFAULT_BATCH = 64


class _BadFrame(ValueError):
    """Request that earns an error frame instead of logits."""


def precompute_memory(model: Seq2Seq, records, chunk: int = 32) -> torch.Tensor:
    """Encoder memory for every trajectory, stacked to (N, n, dim)."""
    outs = []
    with torch.no_grad():
        for start in range(0, len(records), chunk):
            bits = np.stack([pair_bits(r.t, r.y) for r in records[start : start + chunk]])
            outs.append(model.encode(torch.from_numpy(bits).to(torch.float32)))
    return torch.cat(outs)


def _parse_single(frame: dict, vocab: Vocab, n_traj: int) -> tuple[int, list[Item]]:
    if "v" in frame and frame["v"] != PROTOCOL_VERSION:
        raise _BadFrame(f"unsupported protocol version: {frame['v']!r}")
    traj_id = frame.get("traj_id")
    if not isinstance(traj_id, int) or not 0 <= traj_id < n_traj:
        raise _BadFrame(f"traj_id out of range: {traj_id!r}")
    prefix = frame.get("prefix")
    if not isinstance(prefix, list):
        raise _BadFrame("request has no prefix list")
    try:
        return traj_id, wire_to_items(prefix, vocab)
    except CorpusError as exc:
        raise _BadFrame(str(exc)) from None


def _score(
    model: Seq2Seq,
    memory: torch.Tensor,
    vocab: Vocab,
    parsed: Sequence[tuple[int, list[Item]]],
) -> list[list[float]]:
    """One decoder pass over a group of prefixes, last-position logits each."""
    for _, items in parsed:
        if len(items) > model.cfg.max_len:
            raise _BadFrame(f"prefix of {len(items)} items exceeds max_len {model.cfg.max_len}")
    lo, hi, alpha, beta = _padded_items([items for _, items in parsed], token_item(vocab.pad_id))
    mem = memory[[tid for tid, _ in parsed]]
    with torch.no_grad():
        logits = model.decode(mem, lo, hi, alpha, beta)
    last = torch.tensor([len(items) - 1 for _, items in parsed])
    picked = logits[torch.arange(len(parsed)), last]
    return [row.tolist() for row in picked]


def run(
    checkpoint_path: str,
    corpus_path: str,
    batch_limit: int = DEFAULT_BATCH,
    stdin: IO[str] | None = None,
    stdout: IO[str] | None = None,
) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    model, _, vocab, n_grid = load_checkpoint(checkpoint_path)
    records = load_corpus(corpus_path, vocab)
    for rec in records:
        if len(rec.y) != n_grid:
            raise CorpusError(
                f"corpus grid size {len(rec.y)} does not match checkpoint n_grid {n_grid}"
            )
    memory = precompute_memory(model, records)
    log.info("serving %d trajectories from %s", len(records), corpus_path)

    def reply(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    reply({"v": PROTOCOL_VERSION, "ready": True, "batch": batch_limit})
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            reply({"v": PROTOCOL_VERSION, "error": f"bad JSON: {exc}"})
            continue
        try:
            if not isinstance(frame, dict):
                raise _BadFrame("frame is not an object")
            if frame.get("v") != PROTOCOL_VERSION:
                raise _BadFrame(f"unsupported protocol version: {frame.get('v')!r}")
            if "batch" in frame:
                reqs = frame["batch"]
                if not isinstance(reqs, list) or not reqs:
                    raise _BadFrame("batch is not a non-empty list")
                if len(reqs) > batch_limit:
                    raise _BadFrame(f"batch of {len(reqs)} exceeds advertised limit {batch_limit}")
                parsed = [_parse_single(req, vocab, len(records)) for req in reqs]
                reply({"v": PROTOCOL_VERSION, "logits_batch": _score(model, memory, vocab, parsed)})
            else:
                parsed = [_parse_single(frame, vocab, len(records))]
                reply({"v": PROTOCOL_VERSION, "logits": _score(model, memory, vocab, parsed)[0]})
        except _BadFrame as exc:
            reply({"v": PROTOCOL_VERSION, "error": str(exc)})
    return 0
