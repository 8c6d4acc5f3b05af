"""Miniature sequence-to-sequence model over raw IEEE-754 bits.

A standard transformer encoder-decoder, deliberately small: full-size
runs of this family of models use 6 layers, 16 attention heads, an
embedding width of 512 and a feed-forward width of 2048, which is far
beyond what a single CPU core can train in minutes.  The defaults here
(2 layers, 4 heads, 64 wide, 256 feed-forward) keep the same shape at
desk scale.

Inputs are encoded without any hand-designed featurization: each
trajectory sample ``(t_i, y_i)`` is the concatenation of the 64 raw
bits of each double, giving a 128-dimensional 0/1 vector per position
that a linear layer lifts into the model width.  Decoder inputs follow
the mix rule of the constant encoding: the embedding of an item is
``alpha * E[lo] + beta * E[hi]``, which for plain tokens degenerates to
an ordinary lookup.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

PAIR_BITS = 128


class ConfigError(ValueError):
    """Rejected training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    layers: int = 2          # full scale: 6
    heads: int = 4           # full scale: 16
    dim: int = 64            # full scale: 512
    ffn: int = 256           # full scale: 2048
    max_len: int = 64
    batch_size: int = 32
    lr: float = 3e-4         # linear warm-up to this value, then constant
    warmup_steps: int = 100
    epochs: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("layers", "heads", "dim", "ffn", "max_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be positive")


def float_bits(values: np.ndarray) -> np.ndarray:
    """Expand float64 values into per-value 64-bit 0/1 rows.

    Bit order is fixed (little-endian within each value) but otherwise
    arbitrary: the first linear layer owns the interpretation, it only
    has to be the same at train and serve time.
    """
    flat = np.ascontiguousarray(values, dtype="<f8")
    bits = np.unpackbits(flat.view(np.uint8), bitorder="little")
    return bits.reshape(*values.shape, 64)


def pair_bits(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bit-expand a trajectory into (n, 128) rows of concatenated (t, y) bits."""
    if t.shape != y.shape:
        raise ValueError("t and y must have the same shape")
    return np.concatenate([float_bits(t), float_bits(y)], axis=-1)


class Seq2Seq(nn.Module):
    """Transformer encoder-decoder from bit rows to next-token logits."""

    def __init__(self, cfg: TrainConfig, vocab_size: int, n_grid: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.input_proj = nn.Linear(PAIR_BITS, cfg.dim)
        self.enc_pos = nn.Embedding(n_grid, cfg.dim)
        self.tok_embed = nn.Embedding(vocab_size, cfg.dim)
        self.dec_pos = nn.Embedding(cfg.max_len, cfg.dim)
        self.transformer = nn.Transformer(
            d_model=cfg.dim,
            nhead=cfg.heads,
            num_encoder_layers=cfg.layers,
            num_decoder_layers=cfg.layers,
            dim_feedforward=cfg.ffn,
            dropout=0.0,
            batch_first=True,
        )
        self.head = nn.Linear(cfg.dim, vocab_size)

    def mix_embed(
        self,
        lo: torch.Tensor,
        hi: torch.Tensor,
        alpha: torch.Tensor,
        beta: torch.Tensor,
    ) -> torch.Tensor:
        """Decoder input rows: ``alpha * E[lo] + beta * E[hi]``, exactly."""
        table = self.tok_embed.weight
        return alpha.unsqueeze(-1) * table[lo] + beta.unsqueeze(-1) * table[hi]

    def encode(self, bits: torch.Tensor) -> torch.Tensor:
        """Run the encoder over (B, n, 128) bit rows, returning memory."""
        n = bits.shape[1]
        pos = self.enc_pos(torch.arange(n, device=bits.device))
        src = self.input_proj(bits) + pos
        return self.transformer.encoder(src)

    def decode(
        self,
        memory: torch.Tensor,
        lo: torch.Tensor,
        hi: torch.Tensor,
        alpha: torch.Tensor,
        beta: torch.Tensor,
    ) -> torch.Tensor:
        """Causal decode of (B, L) items against memory, to (B, L, V) logits."""
        length = lo.shape[1]
        if length > self.cfg.max_len:
            raise ConfigError(f"sequence length {length} exceeds max_len {self.cfg.max_len}")
        pos = self.dec_pos(torch.arange(length, device=lo.device))
        tgt = self.mix_embed(lo, hi, alpha, beta) + pos
        mask = nn.Transformer.generate_square_subsequent_mask(length, device=lo.device)
        out = self.transformer.decoder(tgt, memory, tgt_mask=mask)
        return self.head(out)

    def forward(self, bits, lo, hi, alpha, beta) -> torch.Tensor:
        return self.decode(self.encode(bits), lo, hi, alpha, beta)


def two_hot_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Cross-entropy between predicted distributions and two-hot targets.

    ``logits`` is (B, L, V), ``targets`` is (B, L, V) rows summing to
    one (a one-hot row for plain tokens, two adjacent grid rows with
    weights alpha and beta for constants), ``mask`` is (B, L) bool with
    True on real positions.  Returns the mean over real positions of
    ``-sum(target * log_softmax(logits))``.
    """
    if not mask.any():
        raise ValueError("loss mask selects no positions")
    ce = -(targets * F.log_softmax(logits, dim=-1)).sum(dim=-1)
    return (ce * mask).sum() / mask.sum()
