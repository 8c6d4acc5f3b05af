"""Random expression generation.

Tree shapes are unary-binary trees.  The number of shapes with n
internal nodes satisfies

    s(0) = 1,   s(n) = s(n-1) + sum_{i=0}^{n-1} s(i) * s(n-1-i)

(1, 2, 6, 22, 90, ... for n = 0, 1, 2, 3, 4).  sample_tree draws
uniformly over the union of all shapes with 1..K internal nodes by
first picking the size proportionally to s(n) and then descending the
recurrence, so every shape in the union is equally likely.

Decoration fills internal nodes with weighted operators and leaves
with the variable or a constant.  Constants are integer-valued with
probability p_int (uniform on {int_min..int_max} minus 0) and
real-valued otherwise (uniform on the open interval, 0 excluded).
Random draws are consumed in pre-order, parent before children.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .expr import BINARY_OPS, UNARY_OPS, Expr, Skeleton, Y, const, instantiate, skeletonize
from .simplify import simplify


class ResampleError(RuntimeError):
    """Constant resampling could not satisfy the placement rules."""


@dataclass(frozen=True)
class GenerationConfig:
    max_internal: int = 5        # K: internal nodes per sampled tree, 1..K
    p_var: float = 0.5           # leaf carries y, else a constant
    p_int: float = 0.5           # constant integer-valued, else real
    int_min: int = -10
    int_max: int = 10
    real_min: float = -10.0
    real_max: float = 10.0
    binary_ops: tuple[str, ...] = BINARY_OPS
    binary_weights: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    unary_ops: tuple[str, ...] = UNARY_OPS
    # neg has weight 0: it is never sampled, only produced by
    # normalization, and survives simplification.
    unary_weights: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2, 0.0)
    n_const: int = 25            # constant sets per retained skeleton


@lru_cache(maxsize=None)
def count_trees(n: int) -> int:
    """Number of unary-binary tree shapes with n internal nodes."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 1
    total = count_trees(n - 1)
    for i in range(n):
        total += count_trees(i) * count_trees(n - 1 - i)
    return total


def sample_tree(config: GenerationConfig, rng: np.random.Generator):
    """Uniform shape over all sizes 1..K.

    Shapes are nested tuples: "leaf", ("u", child) or ("b", left, right).
    """
    sizes = list(range(1, config.max_internal + 1))
    counts = [count_trees(n) for n in sizes]
    total = sum(counts)
    r = int(rng.integers(0, total))
    for n, c in zip(sizes, counts):
        if r < c:
            return _sample_shape(rng, n)
        r -= c
    raise AssertionError("unreachable")


def _sample_shape(rng: np.random.Generator, n: int):
    if n == 0:
        return "leaf"
    r = int(rng.integers(0, count_trees(n)))
    u = count_trees(n - 1)
    if r < u:
        return ("u", _sample_shape(rng, n - 1))
    r -= u
    for i in range(n):
        c = count_trees(i) * count_trees(n - 1 - i)
        if r < c:
            return ("b", _sample_shape(rng, i), _sample_shape(rng, n - 1 - i))
        r -= c
    raise AssertionError("unreachable")


def _weighted_choice(rng: np.random.Generator, items, weights) -> str:
    total = sum(weights)
    r = rng.random() * total
    acc = 0.0
    for item, w in zip(items, weights):
        acc += w
        if r < acc:
            return item
    return items[-1]  # guard against accumulated round-off


def draw_constant(config: GenerationConfig, rng: np.random.Generator, sign: int = 0) -> float:
    """One constant from the leaf law; sign > 0 or < 0 restricts the range."""
    while True:
        if rng.random() < config.p_int:
            v = float(rng.integers(config.int_min, config.int_max + 1))
        else:
            v = float(rng.uniform(config.real_min, config.real_max))
            if v in (config.real_min, config.real_max):
                continue
        if v == 0.0:
            continue
        if sign > 0 and v < 0:
            continue
        if sign < 0 and v > 0:
            continue
        return v


def decorate(shape, config: GenerationConfig, rng: np.random.Generator) -> Expr:
    """Assign operators and leaves to a shape."""
    if shape == "leaf":
        if rng.random() < config.p_var:
            return Y
        return const(draw_constant(config, rng))
    if shape[0] == "u":
        op = _weighted_choice(rng, config.unary_ops, config.unary_weights)
        return Expr(op, (decorate(shape[1], config, rng),))
    op = _weighted_choice(rng, config.binary_ops, config.binary_weights)
    left = decorate(shape[1], config, rng)
    right = decorate(shape[2], config, rng)
    return Expr(op, (left, right))


def sample_expr(config: GenerationConfig, rng: np.random.Generator) -> Expr:
    """Raw (uncanonicalized) random expression."""
    return decorate(sample_tree(config, rng), config, rng)


# ====== constant resampling ======

_RETRIES = 100


def _hole_rules(template: Expr) -> dict[int, tuple[bool, bool]]:
    """Per placeholder: (forbid exactly 1, forbid magnitude 1).

    Positions that would vanish under canonicalization are banned:
    pow base 1; pow exponent, mul factor and div divisor of magnitude 1.
    """
    rules: dict[int, tuple[bool, bool]] = {}

    def walk(n: Expr):
        for idx, a in enumerate(n.args):
            if a.op == "hole":
                k = int(a.value)
                no_one, no_unit = rules.get(k, (False, False))
                if n.op == "pow" and idx == 0:
                    no_one = True
                if (n.op == "pow" and idx == 1) or n.op == "mul" or (n.op == "div" and idx == 1):
                    no_unit = True
                rules[k] = (no_one, no_unit)
            walk(a)

    walk(template)
    return rules


def resample_constants(sk: Skeleton, config: GenerationConfig, rng: np.random.Generator) -> Expr:
    """Fresh constants for a skeleton, canonicalized.

    Every constant is nonzero and keeps the recorded sign, and the
    placement rules of _hole_rules hold, so the result's skeleton equals
    the input.  Raises ResampleError after 100 failed rounds.
    """
    rules = _hole_rules(sk.template)
    for _ in range(_RETRIES):
        values: list[float] = []
        for k, sign in enumerate(sk.signs):
            no_one, no_unit = rules.get(k, (False, False))
            v = None
            for _ in range(_RETRIES):
                cand = draw_constant(config, rng, sign)
                if no_one and cand == 1.0:
                    continue
                if no_unit and abs(cand) == 1.0:
                    continue
                v = cand
                break
            if v is None:
                raise ResampleError(f"no admissible value for placeholder {k}")
            values.append(v)
        result = simplify(instantiate(sk, values))
        if skeletonize(result) == sk:
            return result
    raise ResampleError("resampled constants kept changing the skeleton")
