"""Expression trees for scalar autonomous ODE right-hand sides f(y).

An expression is an immutable tree over:

    binary operators   add sub mul div pow
    unary operators    sin cos exp sqrt log neg
    the variable       y
    constants          finite 64-bit floats

Two text formats are supported and round-trip losslessly:

    prefix   whitespace-separated pre-order tokens, constants as decimal
             literals (shortest repr, at most 17 significant digits),
             e.g. "add pow y 2 mul 1.64 cos y"

    infix    conventional notation with ``**`` for pow and function-call
             syntax for unary operators, e.g. "y**2 + 1.64*cos(y)"

The grammar for infix input (whitespace between tokens is ignored):

    expr   := term   (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("**" factor)?
    atom   := NUMBER | "y" | FUNC "(" expr ")" | "(" expr ")"
    FUNC   := "sin" | "cos" | "exp" | "sqrt" | "log" | "neg"
    NUMBER := decimal literal, optional fraction and exponent part

``**`` is right-associative and binds tighter than unary minus; "*" and
"/" (and "+"/"-") associate to the left.  A unary minus applied directly
to a numeric literal folds into a negative constant.

Skeletons replace every constant leaf with a placeholder C0, C1, ...
numbered in pre-order, remembering the sign each constant carried.
Placeholders are stored as "hole" leaves; they are valid only inside
skeleton templates and are rejected by validate(), evaluate() and the
plain-expression grammars.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

BINARY_OPS = ("add", "sub", "mul", "div", "pow")
UNARY_OPS = ("sin", "cos", "exp", "sqrt", "log", "neg")

_BINARY_RANK = {op: i for i, op in enumerate(BINARY_OPS)}
_UNARY_RANK = {op: i for i, op in enumerate(UNARY_OPS)}

_INFIX_BINARY = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "**"}


class ExprError(ValueError):
    """Invalid expression construction or use."""


class ParseError(ExprError):
    """Text could not be parsed; carries the offending position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class Expr:
    """One node: op is an operator name, "y", "const" or "hole".

    Constants keep their payload in ``value``.  Hole leaves reuse
    ``value`` for the placeholder index.
    """

    op: str
    args: tuple["Expr", ...] = ()
    value: float = 0.0

    def __post_init__(self):
        if self.op in _BINARY_RANK:
            if len(self.args) != 2:
                raise ExprError(f"{self.op} takes 2 arguments, got {len(self.args)}")
        elif self.op in _UNARY_RANK:
            if len(self.args) != 1:
                raise ExprError(f"{self.op} takes 1 argument, got {len(self.args)}")
        elif self.op in ("y", "const", "hole"):
            if self.args:
                raise ExprError(f"{self.op} is a leaf")
            if self.op == "const" and not np.isfinite(self.value):
                raise ExprError(f"non-finite constant {self.value!r}")
        else:
            raise ExprError(f"unknown operator {self.op!r}")

    @property
    def is_leaf(self) -> bool:
        return not self.args

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def is_integer_const(self) -> bool:
        return self.op == "const" and float(self.value).is_integer()

    def __str__(self) -> str:
        return to_infix(self) if self.op != "hole" else f"C{int(self.value)}"


Y = Expr("y")


def const(v: float) -> Expr:
    return Expr("const", value=float(v))


def hole(k: int) -> Expr:
    return Expr("hole", value=float(k))


def nodes(e: Expr):
    """Pre-order node iterator."""
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.args))


def complexity(e: Expr) -> int:
    """Number of prefix tokens: every node counts once."""
    return sum(1 for _ in nodes(e))


def operator_count(e: Expr) -> int:
    """Number of operator nodes (internal nodes)."""
    return sum(1 for n in nodes(e) if n.args)


def contains_y(e: Expr) -> bool:
    return any(n.op == "y" for n in nodes(e))


def validate(e: Expr) -> None:
    """Reject trees that are not plain pipeline expressions.

    Construction already enforces arity and finite constants; this adds
    the no-placeholder rule for data that crossed a text format.
    """
    for n in nodes(e):
        if n.op == "hole":
            raise ExprError("placeholder leaf in a plain expression")


# ====== evaluation ======

def evaluate(e: Expr, y):
    """Evaluate f at y (scalar or ndarray) under IEEE-754 semantics.

    Domain violations produce NaN/Inf instead of raising: division by
    zero, log/sqrt of negatives, and pow of a negative base with a
    non-integer exponent (no complex results).
    """
    arr = np.asarray(y, dtype=np.float64)
    with np.errstate(all="ignore"):
        out = _eval(e, arr)
    if np.isscalar(y) or np.ndim(y) == 0:
        return float(out)
    return out


def _eval(e: Expr, y):
    op = e.op
    if op == "y":
        return y
    if op == "const":
        return np.float64(e.value) if y.ndim == 0 else np.full_like(y, e.value)
    if op == "hole":
        raise ExprError("cannot evaluate a skeleton placeholder")
    if op in _UNARY_RANK:
        a = _eval(e.args[0], y)
        if op == "neg":
            return np.negative(a)
        return getattr(np, op)(a)
    a = _eval(e.args[0], y)
    b = _eval(e.args[1], y)
    if op == "add":
        return np.add(a, b)
    if op == "sub":
        return np.subtract(a, b)
    if op == "mul":
        return np.multiply(a, b)
    if op == "div":
        return np.divide(a, b)
    return np.power(a, b)


def compile_rhs(e: Expr):
    """Compile to a float -> float callable for tight solver loops.

    Python float arithmetic is IEEE-754 except where it raises instead
    of returning inf/nan; those cases fall back to the numpy scalar op
    so results agree with evaluate() bit for bit on the edge cases and
    to within libm rounding elsewhere.
    """
    op = e.op
    if op == "y":
        return lambda y: y
    if op == "const":
        v = e.value
        return lambda y: v
    if op == "hole":
        raise ExprError("cannot evaluate a skeleton placeholder")
    if op in _UNARY_RANK:
        g = compile_rhs(e.args[0])
        if op == "neg":
            return lambda y: -g(y)
        fm, fn = getattr(math, op), getattr(np, op)

        def unary(y, g=g, fm=fm, fn=fn):
            a = g(y)
            try:
                return fm(a)
            except (ValueError, OverflowError):
                with np.errstate(all="ignore"):
                    return float(fn(np.float64(a)))
        return unary
    ga, gb = compile_rhs(e.args[0]), compile_rhs(e.args[1])
    if op == "add":
        return lambda y: ga(y) + gb(y)
    if op == "sub":
        return lambda y: ga(y) - gb(y)
    if op == "mul":
        return lambda y: ga(y) * gb(y)
    if op == "div":
        def div(y, ga=ga, gb=gb):
            a, b = ga(y), gb(y)
            try:
                return a / b
            except ZeroDivisionError:
                with np.errstate(all="ignore"):
                    return float(np.divide(np.float64(a), np.float64(b)))
        return div

    def power(y, ga=ga, gb=gb):
        a, b = ga(y), gb(y)
        try:
            return math.pow(a, b)
        except (ValueError, OverflowError):
            with np.errstate(all="ignore"):
                return float(np.power(np.float64(a), np.float64(b)))
    return power


# ====== prefix format ======

def format_constant(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_prefix(e: Expr) -> str:
    out = []
    for n in nodes(e):
        if n.op == "const":
            out.append(format_constant(n.value))
        elif n.op == "hole":
            raise ExprError("placeholder leaf has no prefix form; use Skeleton.prefix()")
        else:
            out.append(n.op)
    return " ".join(out)


_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_prefix(text: str) -> Expr:
    toks = text.split()
    if not toks:
        raise ParseError("empty input", 0)
    expr, used = _parse_prefix_at(toks, 0)
    if used != len(toks):
        raise ParseError(f"trailing tokens starting with {toks[used]!r}", used)
    return expr


def _parse_prefix_at(toks: list[str], i: int) -> tuple[Expr, int]:
    if i >= len(toks):
        raise ParseError("unexpected end of input", i)
    t = toks[i]
    if t == "y":
        return Y, i + 1
    if t in _BINARY_RANK:
        a, j = _parse_prefix_at(toks, i + 1)
        b, k = _parse_prefix_at(toks, j)
        return Expr(t, (a, b)), k
    if t in _UNARY_RANK:
        a, j = _parse_prefix_at(toks, i + 1)
        return Expr(t, (a,)), j
    if _NUMBER_RE.match(t):
        return const(float(t)), i + 1
    raise ParseError(f"unknown token {t!r}", i)


# ====== infix format ======

# Parenthesization levels for printing.  Negative constants print like a
# unary minus and take its level so "(-3)**y" comes out parenthesized.
_PREC_ADD = 10
_PREC_MUL = 20
_PREC_NEG = 25
_PREC_POW = 30
_PREC_ATOM = 100


def _prec(e: Expr) -> int:
    if e.op in ("add", "sub"):
        return _PREC_ADD
    if e.op in ("mul", "div"):
        return _PREC_MUL
    if e.op == "neg":
        return _PREC_NEG
    if e.op == "pow":
        return _PREC_POW
    if e.op == "const" and e.value < 0:
        return _PREC_NEG
    return _PREC_ATOM


def _wrap(e: Expr, need: bool) -> str:
    s = to_infix(e)
    return f"({s})" if need else s


def to_infix(e: Expr) -> str:
    op = e.op
    if op == "y":
        return "y"
    if op == "const":
        return format_constant(e.value)
    if op == "hole":
        raise ExprError("placeholder leaf has no infix form")
    if op == "neg":
        return "-" + _wrap(e.args[0], _prec(e.args[0]) <= _PREC_NEG)
    if op in _UNARY_RANK:
        return f"{op}({to_infix(e.args[0])})"
    a, b = e.args
    if op in ("add", "sub"):
        left = _wrap(a, _prec(a) < _PREC_ADD)
        # sugar the normalized forms back to a visible minus
        if op == "add" and b.op == "neg":
            return f"{left} - {_wrap(b.args[0], _prec(b.args[0]) <= _PREC_ADD)}"
        if op == "add" and b.op == "const" and b.value < 0:
            return f"{left} - {format_constant(-b.value)}"
        sym = _INFIX_BINARY[op]
        return f"{left} {sym} {_wrap(b, _prec(b) <= _PREC_ADD)}"
    if op in ("mul", "div"):
        left = _wrap(a, _prec(a) < _PREC_MUL)
        right = _wrap(b, _prec(b) <= _PREC_MUL and _prec(b) != _PREC_NEG)
        return f"{left}{_INFIX_BINARY[op]}{right}"
    # pow: right-associative, binds tighter than unary minus
    left = _wrap(a, _prec(a) <= _PREC_POW)
    right = _wrap(b, _prec(b) < _PREC_POW and _prec(b) != _PREC_NEG)
    return f"{left}**{right}"


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]+)"
    r"|(?P<op>\*\*|[()+\-*/]))"
)

_FUNCS = ("sin", "cos", "exp", "sqrt", "log", "neg")


def _lex(text: str):
    toks = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m or m.end() == i:
            if text[i:].strip():
                raise ParseError(f"unexpected character {text[i:].lstrip()[0]!r}", i)
            break
        if m.group("num"):
            toks.append(("num", m.group("num"), m.start("num")))
        elif m.group("name"):
            toks.append(("name", m.group("name"), m.start("name")))
        else:
            toks.append(("op", m.group("op"), m.start("op")))
        i = m.end()
    return toks


class _InfixParser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _lex(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.text))

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect_op(self, sym: str):
        kind, val, pos = self.next()
        if kind != "op" or val != sym:
            raise ParseError(f"expected {sym!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind is not None:
            raise ParseError(f"trailing input {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in ("+", "-"):
                self.next()
                rhs = self.term()
                e = Expr("add" if val == "+" else "sub", (e, rhs))
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in ("*", "/"):
                self.next()
                rhs = self.factor()
                e = Expr("mul" if val == "*" else "div", (e, rhs))
            else:
                return e

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            inner = self.factor()
            if inner.op == "const":
                return const(-inner.value)
            return Expr("neg", (inner,))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "**":
            self.next()
            expo = self.factor()
            return Expr("pow", (base, expo))
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.next()
        if kind == "num":
            return const(float(val))
        if kind == "name":
            if val == "y":
                return Y
            if val in _FUNCS:
                self.expect_op("(")
                inner = self.expr()
                self.expect_op(")")
                return Expr(val, (inner,))
            raise ParseError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        raise ParseError("expected a value", pos)


def parse_infix(text: str) -> Expr:
    return _InfixParser(text).parse()


# ====== total order for canonical sorting ======

def sort_key(e: Expr):
    """Total order: variable < unary < binary < constant, then operator
    rank, then children recursively; constants compare by value."""
    if e.op == "y":
        return (0, 0, 0.0, ())
    if e.op in _UNARY_RANK:
        return (1, _UNARY_RANK[e.op], 0.0, tuple(sort_key(a) for a in e.args))
    if e.op in _BINARY_RANK:
        return (2, _BINARY_RANK[e.op], 0.0, tuple(sort_key(a) for a in e.args))
    if e.op == "const":
        return (3, 0, e.value, ())
    return (4, 0, e.value, ())  # holes, only inside templates


# ====== skeletons ======

_HOLE_RE = re.compile(r"^(-?)C(\d+)$")


@dataclass(frozen=True)
class Skeleton:
    """Template with hole leaves plus the sign of each original constant."""

    template: Expr
    signs: tuple[int, ...]

    @property
    def n_constants(self) -> int:
        return len(self.signs)

    def prefix(self) -> str:
        out = []
        for n in nodes(self.template):
            if n.op == "hole":
                k = int(n.value)
                out.append(("-" if self.signs[k] < 0 else "") + f"C{k}")
            elif n.op == "const":
                out.append(format_constant(n.value))
            else:
                out.append(n.op)
        return " ".join(out)

    @classmethod
    def from_prefix(cls, text: str) -> "Skeleton":
        toks = text.split()
        signs: dict[int, int] = {}

        def parse_at(i: int):
            if i >= len(toks):
                raise ParseError("unexpected end of skeleton", i)
            t = toks[i]
            m = _HOLE_RE.match(t)
            if m:
                k = int(m.group(2))
                signs[k] = -1 if m.group(1) else 1
                return hole(k), i + 1
            if t == "y":
                return Y, i + 1
            if t in _BINARY_RANK:
                a, j = parse_at(i + 1)
                b, k2 = parse_at(j)
                return Expr(t, (a, b)), k2
            if t in _UNARY_RANK:
                a, j = parse_at(i + 1)
                return Expr(t, (a,)), j
            if _NUMBER_RE.match(t):
                return const(float(t)), i + 1
            raise ParseError(f"unknown skeleton token {t!r}", i)

        tpl, used = parse_at(0)
        if used != len(toks):
            raise ParseError("trailing skeleton tokens", used)
        if sorted(signs) != list(range(len(signs))):
            raise ParseError("placeholder indices must be 0..n-1", 0)
        return cls(tpl, tuple(signs[k] for k in range(len(signs))))


def skeletonize(e: Expr) -> Skeleton:
    """Replace constant leaves with C0, C1, ... in pre-order.

    The input should be canonical (see simplify) so that structurally
    equal expressions with different constants map to equal skeletons.
    Applying skeletonize to a template leaves it unchanged.
    """
    signs: list[int] = []

    def walk(n: Expr) -> Expr:
        if n.op == "const":
            k = len(signs)
            signs.append(-1 if n.value < 0 else 1)
            return hole(k)
        if n.is_leaf:
            return n
        return Expr(n.op, tuple(walk(a) for a in n.args), n.value)

    return Skeleton(walk(e), tuple(signs))


def instantiate(sk: Skeleton, values: list[float]) -> Expr:
    """Fill placeholders with concrete constants, in index order."""
    if len(values) != sk.n_constants:
        raise ExprError(f"need {sk.n_constants} constants, got {len(values)}")

    def walk(n: Expr) -> Expr:
        if n.op == "hole":
            return const(values[int(n.value)])
        if n.is_leaf:
            return n
        return Expr(n.op, tuple(walk(a) for a in n.args), n.value)

    return walk(sk.template)


def constants_of(e: Expr) -> list[float]:
    """Constant values in pre-order (matches skeleton numbering)."""
    return [n.value for n in nodes(e) if n.op == "const"]
