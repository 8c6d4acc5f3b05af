"""Readers for the corpus JSONL and vocabulary JSON formats.

Both files are self-describing: the vocabulary carries a ``format`` and
``version`` field, and the corpus opens with a header line doing the
same.  Anything that does not announce itself as the expected format at
the expected version is rejected up front rather than half-parsed.

The module also owns the prefix-string tokenizer.  A stored equation
like ``"mul 3.7 y"`` becomes a sequence of decoder items, where plain
tokens map to a single embedding row and free constants map to the two
neighbouring rows of the constant grid with interpolation weights.  The
bracketing arithmetic is kept identical to the factory encoder so that
targets built here agree bit for bit with what the factory would emit.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CORPUS_FORMAT = "symode-corpus"
VOCAB_FORMAT = "symode-vocab"
FORMAT_VERSION = 1


class CorpusError(ValueError):
    """Unusable vocabulary, corpus file, or record."""


@dataclass(frozen=True)
class Vocab:
    """Token table plus the constant grid, as read from the vocabulary JSON.

    ``grid_offset`` is the embedding row of the first grid point; grid
    point ``i`` lives at row ``grid_offset + i``.
    """

    tokens: tuple[str, ...]
    grid_offset: int
    grid: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.grid_offset + len(self.grid) > len(self.tokens):
            raise CorpusError("constant grid overruns the token table")
        if len(self.grid) < 2:
            raise CorpusError("constant grid needs at least two points")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def token_id(self, name: str) -> int:
        try:
            return self.tokens.index(name)
        except ValueError:
            raise CorpusError(f"token not in vocabulary: {name!r}") from None

    @property
    def pad_id(self) -> int:
        return self.token_id("<pad>")

    @property
    def bos_id(self) -> int:
        return self.token_id("<bos>")

    @property
    def eos_id(self) -> int:
        return self.token_id("<eos>")


def load_vocab(path: str | Path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("format") != VOCAB_FORMAT:
        raise CorpusError(f"not a vocabulary file: format={raw.get('format')!r}")
    if raw.get("version") != FORMAT_VERSION:
        raise CorpusError(f"unsupported vocabulary version: {raw.get('version')!r}")
    return Vocab(
        tokens=tuple(raw["tokens"]),
        grid_offset=int(raw["grid_offset"]),
        grid=tuple(float(g) for g in raw["grid"]),
    )


@dataclass(frozen=True)
class Item:
    """One decoder step as a pair of embedding rows and mix weights.

    A plain token is the degenerate pair ``(id, id, 1.0, 0.0)``; a free
    constant bracketed between grid points ``i`` and ``i + 1`` is
    ``(grid_offset + i, grid_offset + i + 1, alpha, beta)``.  The
    decoder input embedding is always ``alpha * E[lo] + beta * E[hi]``
    and the training target puts mass ``alpha`` on ``lo`` and ``beta``
    on ``hi``, so the one representation drives both sides.
    """

    lo: int
    hi: int
    alpha: float
    beta: float


def token_item(tok: int) -> Item:
    return Item(lo=tok, hi=tok, alpha=1.0, beta=0.0)


def bracket(value: float, vocab: Vocab) -> Item:
    """Two-hot encode a constant against the vocabulary grid.

    Same arithmetic as the factory encoder: locate the cell with a
    right-biased search, clamp to the last cell, and split the mass by
    linear interpolation.  Values outside the grid are a caller bug.
    """
    grid = np.asarray(vocab.grid)
    if not np.isfinite(value) or value < grid[0] or value > grid[-1]:
        raise CorpusError(f"constant outside the vocabulary grid: {value!r}")
    i = int(np.searchsorted(grid, value, side="right")) - 1
    i = min(max(i, 0), len(grid) - 2)
    beta = (value - grid[i]) / (grid[i + 1] - grid[i])
    alpha = 1.0 - beta
    return Item(
        lo=vocab.grid_offset + i,
        hi=vocab.grid_offset + i + 1,
        alpha=float(alpha),
        beta=float(beta),
    )


def tokenize_prefix(expr: str, vocab: Vocab) -> list[Item]:
    """Convert a whitespace-separated prefix string into decoder items.

    Words found in the token table are taken verbatim; anything else
    must parse as a float and is bracketed against the grid.  The
    result is wrapped in begin and end markers.
    """
    names = {name: i for i, name in enumerate(vocab.tokens)}
    items = [token_item(vocab.bos_id)]
    for word in expr.split():
        if word in names:
            items.append(token_item(names[word]))
            continue
        try:
            value = float(word)
        except ValueError:
            raise CorpusError(f"unknown token in prefix string: {word!r}") from None
        items.append(bracket(value, vocab))
    items.append(token_item(vocab.eos_id))
    return items


@dataclass(frozen=True)
class Record:
    """One training trajectory with its tokenized target equation."""

    t: np.ndarray
    y: np.ndarray
    items: tuple[Item, ...]
    skeleton: str
    expr: str


def _decode_y(rec: dict) -> np.ndarray:
    enc = rec.get("encoding", "plain")
    if enc == "b64le":
        buf = base64.b64decode(rec["y"])
        return np.frombuffer(buf, dtype="<f8").astype(np.float64)
    if enc == "plain":
        return np.asarray(rec["y"], dtype=np.float64)
    raise CorpusError(f"unknown trajectory encoding: {enc!r}")


def load_corpus(path: str | Path, vocab: Vocab) -> list[Record]:
    """Read a corpus file and tokenize every record against ``vocab``.

    Records come back in file order, so their list index is the
    trajectory id used by the wire protocol.
    """
    records: list[Record] = []
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CORPUS_FORMAT:
            raise CorpusError(f"not a corpus file: format={header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise CorpusError(f"unsupported corpus version: {header.get('version')!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            y = _decode_y(rec)
            n = int(rec["n_grid"])
            if y.shape != (n,):
                raise CorpusError(f"trajectory length {y.shape} does not match n_grid {n}")
            t = np.arange(n, dtype=np.float64) * (float(rec["t_end"]) / (n - 1))
            records.append(
                Record(
                    t=t,
                    y=y,
                    items=tuple(tokenize_prefix(rec["expr"], vocab)),
                    skeleton=rec["skeleton"],
                    expr=rec["expr"],
                )
            )
    if not records:
        raise CorpusError(f"corpus has no records: {path}")
    return records


def wire_to_items(prefix: list[dict], vocab: Vocab) -> list[Item]:
    """Decode the ``prefix`` field of a wire request into decoder items.

    The prefix is the full decoded sequence so far, begin marker
    included; it is scored verbatim.  Raises ``CorpusError`` on
    anything malformed or empty; the server turns that into an error
    frame rather than fabricating logits.
    """
    if not prefix:
        raise CorpusError("empty prefix: sequences start with the begin token")
    items: list[Item] = []
    for entry in prefix:
        if not isinstance(entry, dict):
            raise CorpusError(f"malformed prefix entry: {entry!r}")
        if "tok" in entry:
            tok = entry["tok"]
            if not isinstance(tok, int) or not 0 <= tok < vocab.size:
                raise CorpusError(f"token id out of range: {tok!r}")
            items.append(token_item(tok))
        elif "const" in entry:
            c = entry["const"]
            try:
                i = int(c["i"])
                alpha = float(c["alpha"])
                beta = float(c["beta"])
            except (KeyError, TypeError, ValueError):
                raise CorpusError(f"malformed constant entry: {entry!r}") from None
            if not 0 <= i < len(vocab.grid) - 1:
                raise CorpusError(f"grid cell out of range: {i}")
            items.append(
                Item(lo=vocab.grid_offset + i, hi=vocab.grid_offset + i + 1, alpha=alpha, beta=beta)
            )
        else:
            raise CorpusError(f"malformed prefix entry: {entry!r}")
    return items
