"""Tiny scalar expression language for problem data functions.

Expressions are closed-form formulas in the spatial coordinates ``x1``,
``x2`` and one value variable (written ``y`` or ``t``; the two names are
interchangeable).  Supported operations: ``+ - * /``, powers ``base^e``
with a numeric exponent, ``abs``, ``sin``, ``cos``, ``exp``, ``sign`` and
the signed power ``spow(u, alpha) = |u|^(alpha-2) * u`` for ``alpha >= 2``.

Trees are immutable; ``diff`` returns the derivative tree with respect to
the value variable, and evaluation is vectorized over numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = ["Expr", "EvalError", "ParseError", "parse_expr", "evaluate"]


class EvalError(ValueError):
    """Evaluation failed (division by zero, invalid power)."""


class ParseError(ValueError):
    """Expression text does not conform to the grammar."""


class Expr:
    """Base class for expression nodes."""

    def ev(self, x1, x2, val):
        raise NotImplementedError

    def diff(self) -> "Expr":
        """Derivative with respect to the value variable."""
        raise NotImplementedError

    def uses_value(self) -> bool:
        return False

    def uses_coords(self) -> bool:
        return False

    def __call__(self, x1, x2, val):
        return self.ev(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float),
                       np.asarray(val, dtype=float))


def evaluate(expr: Expr, x1, x2, val) -> np.ndarray:
    """Evaluate ``expr`` with numpy broadcasting over the arguments."""
    return expr(x1, x2, val)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def ev(self, x1, x2, val):
        return np.broadcast_arrays(np.asarray(self.value, dtype=float), x1, val)[0]

    def diff(self):
        return Const(0.0)

    def __str__(self):
        return repr(self.value) if self.value >= 0 else f"({self.value!r})"


@dataclass(frozen=True)
class Coord(Expr):
    axis: int  # 1 or 2

    def ev(self, x1, x2, val):
        return np.broadcast_arrays(x1 if self.axis == 1 else x2, x1, val)[0]

    def diff(self):
        return Const(0.0)

    def uses_coords(self):
        return True

    def __str__(self):
        return f"x{self.axis}"


@dataclass(frozen=True)
class Value(Expr):
    def ev(self, x1, x2, val):
        return np.broadcast_arrays(val, x1, val)[0]

    def diff(self):
        return Const(1.0)

    def uses_value(self):
        return True

    def __str__(self):
        return "y"


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 1.0


def add(a: Expr, b: Expr) -> Expr:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_zero(b):
        return a
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_zero(a) or _is_zero(b):
        return Const(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return Mul(a, b)


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr

    def ev(self, x1, x2, val):
        return self.left.ev(x1, x2, val) + self.right.ev(x1, x2, val)

    def diff(self):
        return add(self.left.diff(), self.right.diff())

    def uses_value(self):
        return self.left.uses_value() or self.right.uses_value()

    def uses_coords(self):
        return self.left.uses_coords() or self.right.uses_coords()

    def __str__(self):
        return f"({self.left} + {self.right})"


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr

    def ev(self, x1, x2, val):
        return self.left.ev(x1, x2, val) - self.right.ev(x1, x2, val)

    def diff(self):
        return sub(self.left.diff(), self.right.diff())

    def uses_value(self):
        return self.left.uses_value() or self.right.uses_value()

    def uses_coords(self):
        return self.left.uses_coords() or self.right.uses_coords()

    def __str__(self):
        return f"({self.left} - {self.right})"


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr

    def ev(self, x1, x2, val):
        return self.left.ev(x1, x2, val) * self.right.ev(x1, x2, val)

    def diff(self):
        return add(mul(self.left.diff(), self.right), mul(self.left, self.right.diff()))

    def uses_value(self):
        return self.left.uses_value() or self.right.uses_value()

    def uses_coords(self):
        return self.left.uses_coords() or self.right.uses_coords()

    def __str__(self):
        return f"({self.left} * {self.right})"


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr

    def ev(self, x1, x2, val):
        den = self.right.ev(x1, x2, val)
        if np.any(den == 0.0):
            raise EvalError(f"division by zero in {self}")
        return self.left.ev(x1, x2, val) / den

    def diff(self):
        # (u/v)' = u'/v - u v'/v^2
        u, v = self.left, self.right
        return sub(Div(u.diff(), v), Div(mul(u, v.diff()), Mul(v, v)))

    def uses_value(self):
        return self.left.uses_value() or self.right.uses_value()

    def uses_coords(self):
        return self.left.uses_coords() or self.right.uses_coords()

    def __str__(self):
        return f"({self.left} / {self.right})"


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: float

    def ev(self, x1, x2, val):
        b = self.base.ev(x1, x2, val)
        e = self.exponent
        if e != int(e) and np.any(b < 0.0):
            raise EvalError(f"negative base with fractional exponent in {self}")
        out = np.power(b, e)
        if not np.all(np.isfinite(out)):
            raise EvalError(f"non-finite power result in {self}")
        return out

    def diff(self):
        if self.exponent == 0.0:
            return Const(0.0)
        inner = self.base.diff()
        if self.exponent == 1.0:
            return inner
        return mul(mul(Const(self.exponent), Pow(self.base, self.exponent - 1.0)), inner)

    def uses_value(self):
        return self.base.uses_value()

    def uses_coords(self):
        return self.base.uses_coords()

    def __str__(self):
        e = self.exponent
        etxt = repr(int(e)) if e == int(e) else repr(e)
        return f"({self.base}^{etxt})"


@dataclass(frozen=True)
class Func(Expr):
    name: str  # abs, sin, cos, exp, sign
    arg: Expr

    _TABLE = {"abs": np.abs, "sin": np.sin, "cos": np.cos, "exp": np.exp, "sign": np.sign}

    def ev(self, x1, x2, val):
        return self._TABLE[self.name](self.arg.ev(x1, x2, val))

    def diff(self):
        inner = self.arg.diff()
        if self.name == "abs":
            # subgradient convention: derivative 0 at the kink
            return mul(Func("sign", self.arg), inner)
        if self.name == "sign":
            return Const(0.0)
        if self.name == "sin":
            return mul(Func("cos", self.arg), inner)
        if self.name == "cos":
            return mul(Const(-1.0), mul(Func("sin", self.arg), inner))
        if self.name == "exp":
            return mul(Func("exp", self.arg), inner)
        raise NotImplementedError(self.name)

    def uses_value(self):
        return self.arg.uses_value()

    def uses_coords(self):
        return self.arg.uses_coords()

    def __str__(self):
        return f"{self.name}({self.arg})"


@dataclass(frozen=True)
class SPow(Expr):
    """Signed power |u|^(alpha-2) * u, the shape of the cost derivative terms."""

    arg: Expr
    alpha: float

    def __post_init__(self):
        if self.alpha < 2.0:
            raise ParseError(f"spow exponent must be >= 2, got {self.alpha}")

    def ev(self, x1, x2, val):
        u = self.arg.ev(x1, x2, val)
        return np.abs(u) ** (self.alpha - 2.0) * u

    def diff(self):
        return mul(mul(Const(self.alpha - 1.0), Pow(Func("abs", self.arg), self.alpha - 2.0)),
                   self.arg.diff())

    def uses_value(self):
        return self.arg.uses_value()

    def uses_coords(self):
        return self.arg.uses_coords()

    def __str__(self):
        a = self.alpha
        atxt = repr(int(a)) if a == int(a) else repr(a)
        return f"spow({self.arg}, {atxt})"


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_FUNCS = ("abs", "sin", "cos", "exp", "sign")


def _tokenize(text: str) -> list[tuple[str, str]]:
    out = []
    i = 0
    while i < len(text):
        m = _TOKEN.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r} at position {i}")
        if m.lastgroup is not None:
            out.append((m.lastgroup, m.group(m.lastgroup)))
        i = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r} in {self.text!r}")

    def parse(self) -> Expr:
        e = self.expr()
        if self.pos != len(self.tokens):
            raise ParseError(f"trailing input in {self.text!r}")
        return e

    def expr(self) -> Expr:
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self) -> Expr:
        if self.peek() == ("op", "-"):
            self.take()
            return Sub(Const(0.0), self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return Pow(base, self.number())
        return base

    def number(self) -> float:
        sign = 1.0
        while self.peek() in (("op", "-"), ("op", "+")):
            _, op = self.take()
            if op == "-":
                sign = -sign
        kind, val = self.take()
        if kind != "num":
            raise ParseError(f"expected numeric literal in {self.text!r}")
        return sign * float(val)

    def atom(self) -> Expr:
        kind, val = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "name":
            if val == "pi":
                return Const(float(np.pi))
            if val == "x1":
                return Coord(1)
            if val == "x2":
                return Coord(2)
            if val in ("y", "t"):
                return Value()
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Func(val, arg)
            if val == "spow":
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(",")
                alpha = self.number()
                self.expect_op(")")
                return SPow(arg, alpha)
            raise ParseError(f"unknown name {val!r} in {self.text!r}")
        raise ParseError(f"unexpected token {val!r} in {self.text!r}")


def parse_expr(text: str) -> Expr:
    """Parse an expression string into an immutable tree."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression")
    return _Parser(text).parse()
