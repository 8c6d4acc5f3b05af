"""Model pieces: config validation, bit expansion, embeddings, loss."""
from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from symode_trainer.model import (
    ConfigError,
    Seq2Seq,
    TrainConfig,
    float_bits,
    pair_bits,
    two_hot_loss,
)

from conftest import tiny_config


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError, match="divisible"):
        TrainConfig(dim=30, heads=4)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"layers": 0},
        {"batch_size": 0},
        {"epochs": 0},
        {"lr": 0.0},
        {"warmup_steps": 0},
        {"max_len": 0, "heads": 1, "dim": 4},
    ],
)
def test_config_rejects_non_positive(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_float_bits_are_lossless():
    values = np.array([0.0, -1.5, 1e300, 2.5e-308, math.pi, -0.0])
    bits = float_bits(values)
    assert bits.shape == (len(values), 64)
    assert set(np.unique(bits)) <= {0, 1}
    weights = (2 ** np.arange(64, dtype=np.uint64)).astype(np.uint64)
    packed = (bits.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
    back = packed.view(np.float64)
    assert back.tobytes() == values.tobytes()


def test_pair_bits_concatenates_t_then_y():
    t = np.array([0.0, 1.0])
    y = np.array([2.0, 3.0])
    rows = pair_bits(t, y)
    assert rows.shape == (2, 128)
    assert np.array_equal(rows[:, :64], float_bits(t))
    assert np.array_equal(rows[:, 64:], float_bits(y))
    with pytest.raises(ValueError):
        pair_bits(t, np.array([1.0]))


def test_mix_embed_is_exact_interpolation():
    torch.manual_seed(0)
    model = Seq2Seq(tiny_config(), vocab_size=12, n_grid=8)
    lo = torch.tensor([[3, 5]])
    hi = torch.tensor([[4, 5]])
    alpha = torch.tensor([[0.36, 1.0]])
    beta = torch.tensor([[0.64, 0.0]])
    rows = model.mix_embed(lo, hi, alpha, beta)
    table = model.tok_embed.weight
    expect = alpha.unsqueeze(-1) * table[lo] + beta.unsqueeze(-1) * table[hi]
    assert torch.equal(rows, expect)
    assert torch.equal(rows[0, 1], table[5])


def test_mix_rule_matches_factory_convention():
    """Same weighted-sum order as the factory's teacher-forcing helper."""
    from symode.codec import ConstItem, TokenItem, default_vocabulary, teacher_forcing_mix

    pv = default_vocabulary()
    rng = np.random.default_rng(7)
    table = rng.normal(size=(pv.size, 6))
    items = [TokenItem(1), ConstItem(11, 0.36, 0.64), TokenItem(2)]
    theirs = teacher_forcing_mix(items, table, pv)

    tt = torch.from_numpy(table)
    lo = torch.tensor([[1, pv.grid_offset + 11, 2]])
    hi = torch.tensor([[1, pv.grid_offset + 12, 2]])
    alpha = torch.tensor([[1.0, 0.36, 1.0]], dtype=torch.float64)
    beta = torch.tensor([[0.0, 0.64, 0.0]], dtype=torch.float64)
    mine = alpha.unsqueeze(-1) * tt[lo] + beta.unsqueeze(-1) * tt[hi]
    assert np.array_equal(mine[0].numpy(), theirs)


def test_decoder_is_causal():
    torch.manual_seed(3)
    model = Seq2Seq(tiny_config(), vocab_size=12, n_grid=8).eval()
    bits = torch.randint(0, 2, (1, 8, 128)).to(torch.float32)
    lo = torch.tensor([[1, 3, 4, 5]])
    ones = torch.ones(1, 4)
    zeros = torch.zeros(1, 4)
    with torch.no_grad():
        memory = model.encode(bits)
        base = model.decode(memory, lo, lo, ones, zeros)
        lo2 = lo.clone()
        lo2[0, 3] = 9
        poked = model.decode(memory, lo2, lo2, ones, zeros)
    assert torch.equal(base[:, :3], poked[:, :3])
    assert not torch.equal(base[:, 3], poked[:, 3])


def test_decode_rejects_overlong_sequences():
    model = Seq2Seq(tiny_config(max_len=4), vocab_size=12, n_grid=8)
    bits = torch.zeros(1, 8, 128)
    lo = torch.zeros(1, 5, dtype=torch.long)
    with pytest.raises(ConfigError, match="max_len"):
        model(bits, lo, lo, torch.ones(1, 5), torch.zeros(1, 5))


def test_loss_zero_when_confident_and_right():
    targets = torch.zeros(1, 3, 6)
    targets[0, :, 2] = 1.0
    logits = targets * 200.0
    mask = torch.ones(1, 3, dtype=torch.bool)
    assert two_hot_loss(logits, targets, mask).item() < 1e-6


def test_loss_floor_is_target_entropy():
    """CE against a two-hot row bottoms out at the row's own entropy."""
    targets = torch.zeros(1, 1, 6, dtype=torch.float64)
    targets[0, 0, 1] = 0.36
    targets[0, 0, 2] = 0.64
    logits = torch.full((1, 1, 6), -1e9, dtype=torch.float64)
    logits[0, 0, 1] = math.log(0.36)
    logits[0, 0, 2] = math.log(0.64)
    mask = torch.ones(1, 1, dtype=torch.bool)
    entropy = -(0.36 * math.log(0.36) + 0.64 * math.log(0.64))
    assert two_hot_loss(logits, targets, mask).item() == pytest.approx(entropy, rel=1e-12)


def test_loss_ignores_masked_positions():
    torch.manual_seed(1)
    logits = torch.randn(2, 4, 6)
    targets = torch.zeros(2, 4, 6)
    targets[..., 3] = 1.0
    mask = torch.tensor([[True, True, False, False], [True, False, False, False]])
    base = two_hot_loss(logits, targets, mask)
    noisy = logits.clone()
    noisy[~mask] = 1e6
    assert torch.equal(two_hot_loss(noisy, targets, mask), base)
    with pytest.raises(ValueError, match="mask"):
        two_hot_loss(logits, targets, torch.zeros(2, 4, dtype=torch.bool))


def test_init_is_deterministic_given_seed():
    cfg = tiny_config()
    torch.manual_seed(42)
    a = Seq2Seq(cfg, vocab_size=12, n_grid=8)
    torch.manual_seed(42)
    b = Seq2Seq(cfg, vocab_size=12, n_grid=8)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb
        assert torch.equal(va, vb)
