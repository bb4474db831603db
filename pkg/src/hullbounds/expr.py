"""Small expression language for the constraint functions and the objective.

Grammar (lowest to highest precedence)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?            # right associative, -x^2 == -(x^2)
    atom    := NUMBER | "e" | "x" INDEX | NAME "(" expr ("," expr)* ")"
             | "(" expr ")"

Functions: ``exp(u)``, ``log(u)``, ``step(u)``, ``pow(u, v)``, ``min(u, v)``,
``max(u, v)``.  ``step(u)`` is 1 for ``u >= 0`` and 0 otherwise.  Coordinates
are written ``x1 ... xn`` (1-based).  Extra named constants can be bound at
parse time; they become plain numbers in the tree.

Evaluation never returns NaN or an infinity: a non-positive ``log`` argument, a
zero denominator, a fractional power of a negative base and an overflowing
result are all :class:`DomainError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Const", "Coord", "Neg", "BinOp", "Call",
    "ExprError", "ExprSyntaxError", "UnknownIdentifier", "CoordinateOutOfRange",
    "DomainError", "parse_expr", "eval_expr", "eval_many", "format_expr",
    "max_coord",
]


class ExprError(ValueError):
    """Base class for parse errors."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class ExprSyntaxError(ExprError):
    pass


class UnknownIdentifier(ExprError):
    pass


class CoordinateOutOfRange(ExprError):
    pass


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class Coord:
    index: int  # 0-based


@dataclass(frozen=True, slots=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True, slots=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Call:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Const, Coord, Neg, BinOp, Call]

_ARITY = {"exp": 1, "log": 1, "step": 1, "pow": 2, "min": 2, "max": 2}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int, constants: Mapping[str, float]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim
        self.constants = constants

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(text, pos)
            return self.identifier(text, pos)
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)

    def call(self, name: str, pos: int) -> Expr:
        if name not in _ARITY:
            raise UnknownIdentifier(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != _ARITY[name]:
            raise ExprSyntaxError(
                f"{name} takes {_ARITY[name]} argument(s), got {len(args)}", pos)
        return Call(name, tuple(args))

    def identifier(self, name: str, pos: int) -> Expr:
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            idx = int(m.group(1))
            if idx < 1 or idx > self.dim:
                raise CoordinateOutOfRange(
                    f"coordinate {name} out of range for dimension {self.dim}", pos)
            return Coord(idx - 1)
        if name in self.constants:
            return Const(float(self.constants[name]))
        if name == "e":
            return Const(math.e)
        raise UnknownIdentifier(f"unknown identifier {name!r}", pos)


def parse_expr(text: str, dim: int, constants: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` into an expression over ``dim`` coordinates.

    ``constants`` binds extra names to numbers (they shadow ``e``).
    """
    if dim < 0:
        raise ValueError("dim must be non-negative")
    return _Parser(text, dim, constants or {}).parse()


def max_coord(e: Expr) -> int:
    """Largest 1-based coordinate index referenced by ``e`` (0 if none)."""
    if isinstance(e, Coord):
        return e.index + 1
    if isinstance(e, Const):
        return 0
    if isinstance(e, Neg):
        return max_coord(e.arg)
    if isinstance(e, BinOp):
        return max(max_coord(e.left), max_coord(e.right))
    return max((max_coord(a) for a in e.args), default=0)


# -- evaluation -------------------------------------------------------------

def _is_integer(v) -> bool:
    return float(v).is_integer()


def _pow_scalar(b: float, p: float) -> float:
    if _is_integer(p):
        if b == 0.0 and p < 0:
            raise DomainError("zero raised to a negative power")
        return float(b) ** int(p) if abs(p) < 2**31 else math.pow(b, p)
    # 0^p is allowed for p > 0 (continuous extension); otherwise base must be positive
    if b > 0.0 or (b == 0.0 and p > 0):
        return math.pow(b, p)
    raise DomainError(f"fractional power {p!r} of non-positive base {b!r}")


def _eval(e: Expr, x: Sequence[float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Coord):
        return float(x[e.index])
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, BinOp):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise DomainError("division by zero")
            return a / b
        try:
            return _pow_scalar(a, b)
        except OverflowError:
            raise DomainError("overflow in power") from None
    args = [_eval(a, x) for a in e.args]
    name = e.name
    if name == "exp":
        try:
            return math.exp(args[0])
        except OverflowError:
            raise DomainError("overflow in exp") from None
    if name == "log":
        if args[0] <= 0.0:
            raise DomainError("log of non-positive argument")
        return math.log(args[0])
    if name == "step":
        return 1.0 if args[0] >= 0.0 else 0.0
    if name == "pow":
        try:
            return _pow_scalar(args[0], args[1])
        except OverflowError:
            raise DomainError("overflow in power") from None
    if name == "min":
        return min(args)
    return max(args)


def eval_expr(e: Expr, point: Sequence[float]) -> float:
    """Evaluate ``e`` at a single point, raising :class:`DomainError` on violations."""
    v = _eval(e, point)
    if not math.isfinite(v):
        raise DomainError("non-finite value")
    return v


def _eval_vec(e: Expr, X: np.ndarray, bad: np.ndarray) -> np.ndarray:
    # ``bad`` is updated in place with domain violations.
    if isinstance(e, Const):
        return np.full(X.shape[0], e.value)
    if isinstance(e, Coord):
        return X[:, e.index].astype(float, copy=True)
    if isinstance(e, Neg):
        return -_eval_vec(e.arg, X, bad)
    if isinstance(e, BinOp):
        a = _eval_vec(e.left, X, bad)
        b = _eval_vec(e.right, X, bad)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            zero = b == 0.0
            bad |= zero
            return a / np.where(zero, 1.0, b)
        return _pow_vec(a, b, bad)
    args = [_eval_vec(a, X, bad) for a in e.args]
    name = e.name
    if name == "exp":
        return np.exp(args[0])
    if name == "log":
        nonpos = ~(args[0] > 0.0)
        bad |= nonpos
        return np.log(np.where(nonpos, 1.0, args[0]))
    if name == "step":
        return np.where(args[0] >= 0.0, 1.0, 0.0)
    if name == "pow":
        return _pow_vec(args[0], args[1], bad)
    if name == "min":
        return np.minimum(args[0], args[1])
    return np.maximum(args[0], args[1])


def _pow_vec(b: np.ndarray, p: np.ndarray, bad: np.ndarray) -> np.ndarray:
    integral = np.floor(p) == p
    ok = np.where(integral, ~((b == 0.0) & (p < 0)), (b > 0.0) | ((b == 0.0) & (p > 0)))
    bad |= ~ok
    safe_b = np.where(ok, b, 1.0)
    # negative bases only reach here with integral exponents
    neg = safe_b < 0
    mag = np.power(np.abs(safe_b), p)
    odd = integral & (np.mod(p, 2.0) == 1.0)
    return np.where(neg & odd, -mag, mag)


def eval_many(e: Expr, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised evaluation over the rows of ``points``.

    Returns ``(values, valid)``; entries where the expression is undefined or
    non-finite have ``valid == False`` and an unspecified value.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    bad = np.zeros(X.shape[0], dtype=bool)
    with np.errstate(all="ignore"):
        v = _eval_vec(e, X, bad)
    v = np.asarray(v, dtype=float)
    bad |= ~np.isfinite(v)
    return v, ~bad


# -- printing ---------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_PREC = 3


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise ValueError(f"cannot format non-finite constant {s}")
    return s


def _fmt(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        if e.value < 0:
            return "(" + _fmt_num(e.value) + ")", 5
        return _fmt_num(e.value), 5
    if isinstance(e, Coord):
        return f"x{e.index + 1}", 5
    if isinstance(e, Call):
        return e.name + "(" + ", ".join(_fmt(a)[0] for a in e.args) + ")", 5
    if isinstance(e, Neg):
        s, p = _fmt(e.arg)
        if p < _UNARY_PREC:
            s = f"({s})"
        return "-" + s, _UNARY_PREC
    prec = _PREC[e.op]
    ls, lp = _fmt(e.left)
    rs, rp = _fmt(e.right)
    if e.op == "^":
        # right associative; the exponent may be unary
        if lp <= prec:
            ls = f"({ls})"
        if rp < _UNARY_PREC:
            rs = f"({rs})"
    else:
        if lp < prec:
            ls = f"({ls})"
        if rp <= prec:
            rs = f"({rs})"
    return f"{ls} {e.op} {rs}" if e.op != "^" else f"{ls}^{rs}", prec


def format_expr(e: Expr) -> str:
    """Render ``e`` back to text accepted by :func:`parse_expr`."""
    return _fmt(e)[0]
