"""Deterministic expression canonicalizer.

This is intentionally not a CAS.  The rewrite set is fixed:

  * constant subtrees fold (only when the folded value is finite);
  * identities x+0 -> x, x*1 -> x, x**1 -> x, 1**x -> 1;
  * a - b normalizes to add(a, neg(b)); neg of a constant folds into
    the constant; double negation drops;
  * add/mul chains flatten and their operands sort under the total
    order of expr.sort_key (variable, unary, binary, then constants
    last by value), rebuilt left-nested.

No like-term collection, no distribution, no trig identities.  The
result is canonical: structurally equal inputs map to the same tree,
and simplify(simplify(e)) == simplify(e).

A result without the variable is a constant equation f(y)=c; callers
detect that with expr.contains_y.
"""

from __future__ import annotations

from functools import reduce

import numpy as np

from .expr import Expr, const, evaluate, sort_key

_MAX_PASSES = 8


def simplify(e: Expr) -> Expr:
    cur = e
    for _ in range(_MAX_PASSES):
        nxt = _pass(cur)
        if nxt == cur:
            return nxt
        cur = nxt
    return cur


def _pass(e: Expr) -> Expr:
    if e.is_leaf:
        return e
    args = tuple(_pass(a) for a in e.args)
    op = e.op
    if op == "sub":
        return _chain("add", (args[0], _negate(args[1])))
    if op == "neg":
        return _negate(args[0])
    if op in ("add", "mul"):
        return _chain(op, args)
    if op in ("div", "pow"):
        a, b = args
        if a.is_const and b.is_const:
            v = evaluate(Expr(op, (a, b)), 0.0)
            if np.isfinite(v):
                return const(v)
        if op == "pow":
            if b.is_const and b.value == 1.0:
                return a
            if a.is_const and a.value == 1.0:
                return const(1.0)
        return Expr(op, (a, b))
    # sin cos exp sqrt log on a folded constant
    a = args[0]
    if a.is_const:
        v = evaluate(Expr(op, (a,)), 0.0)
        if np.isfinite(v):
            return const(v)
    return Expr(op, (a,))


def _negate(x: Expr) -> Expr:
    if x.is_const:
        return const(-x.value)
    if x.op == "neg":
        return x.args[0]
    return Expr("neg", (x,))


def _collect(op: str, e: Expr, out: list):
    if e.op == op:
        for a in e.args:
            _collect(op, a, out)
    else:
        out.append(e)


def _chain(op: str, operands) -> Expr:
    flat: list[Expr] = []
    for o in operands:
        _collect(op, o, flat)
    consts = [o for o in flat if o.is_const]
    rest = [o for o in flat if not o.is_const]
    identity = 0.0 if op == "add" else 1.0
    if consts:
        total = consts[0].value
        for c in consts[1:]:
            total = total + c.value if op == "add" else total * c.value
        if np.isfinite(total):
            if not (rest and total == identity):
                rest.append(const(total))
        else:
            rest.extend(consts)  # overflow: leave unfolded
    if not rest:
        return const(identity)
    rest.sort(key=sort_key)
    if len(rest) == 1:
        return rest[0]
    return reduce(lambda l, r: Expr(op, (l, r)), rest)
