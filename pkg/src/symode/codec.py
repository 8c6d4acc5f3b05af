"""Token codec between expressions, model vocabularies and trajectories.

The default vocabulary has 36 entries:

    0 <pad>   1 <bos>   2 <eos>   3 y
    4..8      add sub mul div pow
    9..14     sin cos exp sqrt log neg
    15..35    grid tokens for the equidistant constant grid -10..10

Constants are not quantized to the grid: a constant c in [x_1, x_m] is
a *two-hot* item over the bracketing pair (x_i, x_{i+1}) with weights
alpha + beta = 1 chosen so alpha*x_i + beta*x_{i+1} = c (up to 1 ulp).
Grid hits get alpha = 1, except the right edge which uses the last pair
with beta = 1.  Out-of-range or non-finite constants raise instead of
clamping.

Decoding logits: take the argmax over the whole vocabulary; a non-grid
argmax is that token.  For a grid argmax, pair it with its larger-logit
neighbor (edge tokens have only one; interior ties go right), softmax
over all logits, and renormalize the pair's two probabilities to sum
to one.

Trajectory samples enter the model as raw IEEE-754 64-bit patterns;
encode_float64/decode_float64 are bijective, including NaN payloads
and infinities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .expr import BINARY_OPS, UNARY_OPS, Expr, Y, const, nodes

PAD, BOS, EOS = 0, 1, 2


class CodecError(ValueError):
    pass


class ConstantRangeError(CodecError):
    pass


class DetokenizeError(CodecError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    grid_offset: int
    grid: tuple[float, ...]
    version: int = 1

    def __post_init__(self):
        if self.tokens[:3] != ("<pad>", "<bos>", "<eos>"):
            raise CodecError("tokens 0..2 must be <pad> <bos> <eos>")
        if len(self.tokens) != self.grid_offset + len(self.grid):
            raise CodecError("grid must occupy the vocabulary tail")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise CodecError("grid values must be strictly increasing")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, name: str) -> int:
        try:
            return self.tokens.index(name)
        except ValueError:
            raise CodecError(f"token {name!r} not in vocabulary") from None

    def is_grid(self, tid: int) -> bool:
        return self.grid_offset <= tid < self.size


def default_vocabulary() -> Vocabulary:
    grid = tuple(float(v) for v in range(-10, 11))
    names = ("<pad>", "<bos>", "<eos>", "y") + BINARY_OPS + UNARY_OPS
    names = names + tuple(f"g{int(v)}" for v in grid)
    return Vocabulary(names, len(names) - len(grid), grid)


def vocabulary_to_json(v: Vocabulary) -> dict:
    return {
        "format": "symode-vocab",
        "version": v.version,
        "pad": PAD,
        "bos": BOS,
        "eos": EOS,
        "tokens": list(v.tokens),
        "grid_offset": v.grid_offset,
        "grid": list(v.grid),
    }


def vocabulary_from_json(doc: dict) -> Vocabulary:
    if doc.get("format") != "symode-vocab":
        raise CodecError("not a vocabulary document")
    if doc.get("version") != 1:
        raise CodecError(f"unsupported vocabulary version {doc.get('version')!r}")
    return Vocabulary(tuple(doc["tokens"]), int(doc["grid_offset"]), tuple(float(g) for g in doc["grid"]))


# ====== sequence items ======

@dataclass(frozen=True)
class TokenItem:
    id: int


@dataclass(frozen=True)
class ConstItem:
    i: int          # left index of the grid pair (i, i+1)
    alpha: float
    beta: float

    def value(self, vocab: Vocabulary) -> float:
        return self.alpha * vocab.grid[self.i] + self.beta * vocab.grid[self.i + 1]


Item = TokenItem | ConstItem


def item_to_json(item: Item) -> dict:
    if isinstance(item, TokenItem):
        return {"tok": item.id}
    return {"const": {"i": item.i, "alpha": item.alpha, "beta": item.beta}}


def item_from_json(obj: dict) -> Item:
    if "tok" in obj:
        return TokenItem(int(obj["tok"]))
    if "const" in obj:
        c = obj["const"]
        return ConstItem(int(c["i"]), float(c["alpha"]), float(c["beta"]))
    raise CodecError(f"malformed sequence item {obj!r}")


# ====== two-hot constants ======

def two_hot_encode(c: float, vocab: Vocabulary) -> ConstItem:
    grid = vocab.grid
    if len(grid) < 2:
        raise CodecError("vocabulary has no constant grid")
    c = float(c)
    if not np.isfinite(c) or c < grid[0] or c > grid[-1]:
        raise ConstantRangeError(f"constant {c!r} outside grid [{grid[0]}, {grid[-1]}]")
    i = int(np.searchsorted(grid, c, side="right")) - 1
    i = min(max(i, 0), len(grid) - 2)
    beta = (c - grid[i]) / (grid[i + 1] - grid[i])
    alpha = 1.0 - beta
    return ConstItem(i, alpha, beta)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    with np.errstate(all="ignore"):
        e = np.exp(shifted)
    return e / np.sum(e)


def refine_constant(logits: np.ndarray, tid: int, vocab: Vocabulary) -> ConstItem:
    """Two-hot item for grid token tid given the full logit vector."""
    g = tid - vocab.grid_offset
    m = len(vocab.grid)
    if g == 0:
        nb = 1
    elif g == m - 1:
        nb = m - 2
    else:
        nb = g + 1 if logits[vocab.grid_offset + g + 1] >= logits[vocab.grid_offset + g - 1] else g - 1
    probs = _softmax(np.asarray(logits, dtype=np.float64))
    pm = probs[tid]
    pn = probs[vocab.grid_offset + nb]
    tot = pm + pn
    wm = pm / tot if tot > 0 else 1.0
    wn = pn / tot if tot > 0 else 0.0
    if nb > g:
        return ConstItem(g, wm, wn)
    return ConstItem(nb, wn, wm)


def two_hot_decode(logits: np.ndarray, vocab: Vocabulary) -> Item:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (vocab.size,):
        raise CodecError(f"expected {vocab.size} logits, got shape {logits.shape}")
    am = int(np.argmax(logits))
    if not vocab.is_grid(am):
        return TokenItem(am)
    return refine_constant(logits, am, vocab)


# ====== expression sequences ======

def tokenize_expr(e: Expr, vocab: Vocabulary) -> list[Item]:
    """BOS + pre-order items + EOS; length is complexity(e) + 2."""
    items: list[Item] = [TokenItem(BOS)]
    for n in nodes(e):
        if n.op == "const":
            items.append(two_hot_encode(n.value, vocab))
        elif n.op == "hole":
            raise CodecError("cannot tokenize a skeleton placeholder")
        else:
            items.append(TokenItem(vocab.id_of(n.op)))
    items.append(TokenItem(EOS))
    return items


def detokenize(items: list[Item], vocab: Vocabulary) -> Expr:
    """Inverse of tokenize_expr; raises DetokenizeError on malformed input."""
    if len(items) < 2 or items[0] != TokenItem(BOS) or items[-1] != TokenItem(EOS):
        raise DetokenizeError("sequence must be BOS ... EOS")
    body = items[1:-1]

    def parse_at(i: int) -> tuple[Expr, int]:
        if i >= len(body):
            raise DetokenizeError("truncated sequence")
        item = body[i]
        if isinstance(item, ConstItem):
            if not (0 <= item.i < len(vocab.grid) - 1):
                raise DetokenizeError(f"grid pair index {item.i} out of range")
            if not (np.isfinite(item.alpha) and np.isfinite(item.beta)) or abs(item.alpha + item.beta - 1.0) > 1e-6:
                raise DetokenizeError("two-hot weights must sum to 1")
            return const(item.value(vocab)), i + 1
        name = vocab.tokens[item.id] if 0 <= item.id < vocab.size else None
        if name == "y":
            return Y, i + 1
        if name in BINARY_OPS:
            a, j = parse_at(i + 1)
            b, k = parse_at(j)
            return Expr(name, (a, b)), k
        if name in UNARY_OPS:
            a, j = parse_at(i + 1)
            return Expr(name, (a,)), j
        if name is not None and vocab.is_grid(item.id):
            raise DetokenizeError("bare grid token without two-hot weights")
        raise DetokenizeError(f"unexpected token id {item.id}")

    expr, used = parse_at(0)
    if used != len(body):
        raise DetokenizeError("trailing items after a complete expression")
    return expr


# ====== trajectory bit patterns ======

def encode_float64(x: float) -> int:
    """Bit pattern of the IEEE-754 double, as an unsigned 64-bit int."""
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def decode_float64(bits: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def trajectory_bits(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(n, 2) uint64 array of little-endian bit patterns for (t_i, y_i)."""
    pairs = np.stack([np.asarray(t, dtype="<f8"), np.asarray(y, dtype="<f8")], axis=1)
    return np.ascontiguousarray(pairs).view("<u8")


# ====== decoder-side embedding mix ======

def teacher_forcing_mix(items: list[Item], table: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Embed a sequence with a (vocab, dim) table.

    Plain tokens take their row; a two-hot constant takes
    alpha * row(x_i) + beta * row(x_{i+1}).
    """
    table = np.asarray(table)
    if table.shape[0] != vocab.size:
        raise CodecError("embedding table does not match vocabulary")
    out = np.empty((len(items), table.shape[1]), dtype=table.dtype)
    for r, item in enumerate(items):
        if isinstance(item, TokenItem):
            out[r] = table[item.id]
        else:
            off = vocab.grid_offset
            out[r] = item.alpha * table[off + item.i] + item.beta * table[off + item.i + 1]
    return out
