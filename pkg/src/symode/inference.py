"""Beam-search decoding against a scorer and top-k evaluation.

A scorer maps (traj_id, decoded prefix) to one logit per vocabulary
entry.  Beam search keeps `width` partial sequences ranked by the
cumulative log-softmax; every vocabulary entry is a continuation, grid
tokens are expanded per token and their two-hot pair is refined from
the same step's logits.  Beams that emit EOS freeze and keep competing
on their final score.  Ties break deterministically: shorter first,
then lexicographically by item ids.

Scorers can live in-process (OracleScorer replays a target sequence)
or behind the line protocol: newline-delimited JSON over a local
socket or a child process's stdio.  One frame per line:

    -> {"v": 1, "traj_id": 7, "prefix": [{"tok": 1}, ...]}
    <- {"v": 1, "logits": [ ... ]}
    <- {"v": 1, "error": "..."}          (aborts decoding)

On connect the server greets with {"v": 1, "ready": true, "batch": B}.
If B is true the client sends one frame per decoding step covering all
live beams: {"v": 1, "batch": [<request>, ...]} answered by
{"v": 1, "logits_batch": [[...], ...]} in the same order.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .codec import (
    EOS,
    ConstItem,
    Item,
    TokenItem,
    Vocabulary,
    detokenize,
    item_from_json,
    item_to_json,
    refine_constant,
    tokenize_expr,
)
from .expr import Expr
from .metrics import MetricsConfig, MetricsReport, score


class ScorerError(RuntimeError):
    pass


class NoCandidateError(RuntimeError):
    """Every beam ran out of length without emitting EOS."""


@dataclass(frozen=True)
class BeamConfig:
    width: int = 1536
    max_len: int = 64                    # total items including BOS/EOS
    length_norm: float = 0.0             # exponent; 0 disables
    top_k: tuple[int, ...] = (1, 10, 100, 1536)
    # width falls back when vocab*width*max_len exceeds this budget
    mem_budget: int = 8_000_000
    fallback_width: int = 256


class Scorer:
    """Interface: logits for the next item given a decoded prefix."""

    def logits(self, traj_id: int, prefix: list[Item]) -> np.ndarray:
        raise NotImplementedError

    def logits_batch(self, traj_id: int, prefixes: list[list[Item]]) -> list[np.ndarray]:
        return [self.logits(traj_id, p) for p in prefixes]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits)
    if not np.isfinite(m):
        m = 0.0
    shifted = logits - m
    with np.errstate(all="ignore"):
        lse = np.log(np.sum(np.exp(shifted)))
    return shifted - lse


def _item_key(item: Item):
    if isinstance(item, TokenItem):
        return (item.id, 0.0)
    return (item.i, item.beta)


def _rank_key(entry, length_norm: float):
    s, items, _ = entry
    if length_norm > 0.0:
        s = s / (len(items) ** length_norm)
    return (-s, len(items), tuple(_item_key(i) for i in items))


def beam_search(scorer: Scorer, traj_id: int, vocab: Vocabulary, cfg: BeamConfig) -> list[tuple[float, list[Item]]]:
    """Ranked finished sequences (score, items), best first."""
    width = cfg.width
    if vocab.size * width * cfg.max_len > cfg.mem_budget:
        width = cfg.fallback_width
    grid_lo = vocab.grid_offset

    beams = [(0.0, (TokenItem(1),), False)]  # score, items, finished
    while True:
        live = [b for b in beams if not b[2] and len(b[1]) < cfg.max_len]
        if not live:
            break
        frozen = [b for b in beams if b[2]]
        logits_all = scorer.logits_batch(traj_id, [list(b[1]) for b in live])
        cand = list(frozen)
        for (s, items, _), logits in zip(live, logits_all):
            logits = np.asarray(logits, dtype=np.float64)
            if logits.shape != (vocab.size,):
                raise ScorerError(f"scorer returned {logits.shape}, expected ({vocab.size},)")
            ls = _log_softmax(logits)
            for tid in range(vocab.size):
                if tid >= grid_lo and len(vocab.grid) >= 2:
                    item: Item = refine_constant(logits, tid, vocab)
                else:
                    item = TokenItem(tid)
                cand.append((s + float(ls[tid]), items + (item,), tid == EOS))
        cand.sort(key=lambda e: _rank_key(e, cfg.length_norm))
        beams = cand[:width]
        if all(b[2] for b in beams):
            break

    finished = [(s, list(items)) for s, items, done in beams if done]
    if not finished:
        raise NoCandidateError(f"no beam emitted EOS within {cfg.max_len} items")
    return finished


def top_k_evaluate(candidates: list[tuple[float, list[Item]]], gt: Expr, solution_y: np.ndarray,
                   vocab: Vocabulary, ks: tuple[int, ...], mcfg: MetricsConfig = MetricsConfig()):
    """Any-of pass flags over the first k candidates, for each k.

    Returns (per_k, reports) where reports[i] is the MetricsReport for
    candidate i or None if it did not parse back into an expression.
    """
    reports: list[MetricsReport | None] = []
    for _, items in candidates:
        try:
            pred = detokenize(items, vocab)
            reports.append(score(gt, pred, solution_y, mcfg))
        except Exception:
            reports.append(None)

    flags = ("allclose", "r2_pass", "skeleton", "skeleton_and_allclose", "skeleton_and_r2")
    per_k: dict[int, dict[str, bool]] = {}
    for k in ks:
        head = reports[:k]
        per_k[k] = {
            f: any(r is not None and getattr(r, f) for r in head) for f in flags
        }
    return per_k, reports


# ====== scorers ======

class OracleScorer(Scorer):
    """Replays known target sequences: the target continuation of a
    matching prefix gets all the probability mass, everything else is
    pushed to the floor.  Off-target prefixes see flat floor logits.

    Prefix comparison is semantic: constant items match on the grid
    pair index with beta within 1e-9, because decoding reconstructs
    the pair weights through a softmax and exact bit equality would
    reject the oracle's own emissions."""

    ON = 0.0
    FLOOR = -1e4

    def __init__(self, targets: dict[int, list[Item]], vocab: Vocabulary):
        self.targets = targets
        self.vocab = vocab

    @classmethod
    def for_expressions(cls, exprs: dict[int, Expr], vocab: Vocabulary) -> "OracleScorer":
        return cls({tid: tokenize_expr(e, vocab) for tid, e in exprs.items()}, vocab)

    @staticmethod
    def _match(got: Item, want: Item) -> bool:
        if type(got) is not type(want):
            return False
        if isinstance(got, TokenItem):
            return got.id == want.id
        return got.i == want.i and abs(got.beta - want.beta) <= 1e-9

    def logits(self, traj_id: int, prefix: list[Item]) -> np.ndarray:
        out = np.full(self.vocab.size, self.FLOOR)
        target = self.targets.get(traj_id)
        if target is None:
            raise ScorerError(f"unknown trajectory id {traj_id}")
        k = len(prefix)
        if k >= len(target) or not all(self._match(g, w) for g, w in zip(prefix, target)):
            return out
        nxt = target[k]
        if isinstance(nxt, TokenItem):
            out[nxt.id] = self.ON
        else:
            # zero-weight pair members stay at the floor so the codec's
            # own tie rules reconstruct the canonical pair index
            off = self.vocab.grid_offset
            if nxt.alpha > 0.0:
                out[off + nxt.i] = float(np.log(nxt.alpha))
            if nxt.beta > 0.0:
                out[off + nxt.i + 1] = float(np.log(nxt.beta))
        return out


class UniformScorer(Scorer):
    """Every continuation equally likely; useful for enumeration tests."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def logits(self, traj_id: int, prefix: list[Item]) -> np.ndarray:
        return np.zeros(self.vocab.size)


class RemoteScorer(Scorer):
    """Line-protocol client over a TCP socket or a child process."""

    def __init__(self, connect: str | None = None, command: str | None = None, vocab_size: int | None = None):
        self.proc = None
        self.sock = None
        if (connect is None) == (command is None):
            raise ScorerError("need exactly one of connect=host:port or command")
        if connect is not None:
            host, _, port = connect.rpartition(":")
            self.sock = socket.create_connection((host or "127.0.0.1", int(port)))
            self.rfile = self.sock.makefile("r", encoding="utf-8")
            self.wfile = self.sock.makefile("w", encoding="utf-8")
        else:
            self.proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
            self.rfile = self.proc.stdout
            self.wfile = self.proc.stdin
        self.vocab_size = vocab_size
        greeting = self._read()
        if not greeting.get("ready"):
            raise ScorerError(f"bad greeting {greeting!r}")
        self.batch_ok = bool(greeting.get("batch"))

    def _read(self) -> dict:
        line = self.rfile.readline()
        if not line:
            raise ScorerError("scorer connection closed")
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerError(f"malformed frame: {exc}") from exc
        if frame.get("v") != 1:
            raise ScorerError(f"unsupported protocol version {frame.get('v')!r}")
        if "error" in frame:
            raise ScorerError(f"scorer error: {frame['error']}")
        return frame

    def _write(self, frame: dict) -> None:
        self.wfile.write(json.dumps(frame) + "\n")
        self.wfile.flush()

    def _check(self, logits) -> np.ndarray:
        arr = np.asarray(logits, dtype=np.float64)
        if self.vocab_size is not None and arr.shape != (self.vocab_size,):
            raise ScorerError(f"scorer returned {arr.shape}, expected ({self.vocab_size},)")
        return arr

    def logits(self, traj_id: int, prefix: list[Item]) -> np.ndarray:
        self._write({"v": 1, "traj_id": traj_id, "prefix": [item_to_json(i) for i in prefix]})
        return self._check(self._read()["logits"])

    def logits_batch(self, traj_id: int, prefixes: list[list[Item]]) -> list[np.ndarray]:
        if not self.batch_ok:
            return [self.logits(traj_id, p) for p in prefixes]
        reqs = [{"v": 1, "traj_id": traj_id, "prefix": [item_to_json(i) for i in p]} for p in prefixes]
        self._write({"v": 1, "batch": reqs})
        out = self._read()["logits_batch"]
        if len(out) != len(prefixes):
            raise ScorerError("batch reply length mismatch")
        return [self._check(l) for l in out]

    def close(self) -> None:
        for f in (getattr(self, "wfile", None), getattr(self, "rfile", None)):
            try:
                if f:
                    f.close()
            except Exception:
                pass
        if self.sock:
            self.sock.close()
        if self.proc:
            self.proc.terminate()
            self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_wire_request(line: str) -> dict:
    """Server-side parse of one request line; raises ScorerError."""
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ScorerError(f"malformed request: {exc}") from exc
    if frame.get("v") != 1:
        raise ScorerError(f"unsupported protocol version {frame.get('v')!r}")
    if "batch" in frame:
        return {"batch": [_parse_single(r) for r in frame["batch"]]}
    return _parse_single(frame)


def _parse_single(frame: dict) -> dict:
    if "traj_id" not in frame or "prefix" not in frame:
        raise ScorerError("request needs traj_id and prefix")
    return {"traj_id": int(frame["traj_id"]),
            "prefix": [item_from_json(o) for o in frame["prefix"]]}
