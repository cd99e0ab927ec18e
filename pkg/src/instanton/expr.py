"""Scalar expressions in the coordinates ``x0 .. x(n-1)``.

The grammar is deliberately small::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom (('^' | '**') unary)?
    atom    := NUMBER | 'pi' | 'e' | xN | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := sin | cos | exp

Exponents must not depend on the coordinates, which keeps every
expression differentiable term by term without a logarithm.

Trees are immutable and hashable.  ``compile_vector`` turns a list of
trees into a Python callable, once for scalar ``math`` evaluation and once
for vectorised ``numpy`` evaluation.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EvaluationError, ParseError

FUNCTIONS = ("sin", "cos", "exp")
CONSTANTS = {"pi": math.pi, "e": math.e}


class Expr:
    """Base node."""

    def variables(self) -> frozenset[int]:
        raise NotImplementedError

    def diff(self, i: int) -> "Expr":
        raise NotImplementedError

    def source(self) -> str:
        """Python source for the node, using names bound by ``compile_vector``."""
        raise NotImplementedError

    def is_constant(self):
        return not self.variables()

    def __call__(self, x):
        return evaluate(self, x)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def variables(self):
        return frozenset()

    def diff(self, i):
        return ZERO

    def source(self):
        return repr(float(self.value))

    def __str__(self):
        v = float(self.value)
        if v == math.pi:
            return "pi"
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)


@dataclass(frozen=True)
class Var(Expr):
    index: int

    def variables(self):
        return frozenset((self.index,))

    def diff(self, i):
        return ONE if i == self.index else ZERO

    def source(self):
        return f"x[{self.index}]"

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def variables(self):
        return self.arg.variables()

    def diff(self, i):
        return neg(self.arg.diff(i))

    def source(self):
        return f"(-{self.arg.source()})"

    def __str__(self):
        return f"-{_wrap(self.arg, 3)}"


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def variables(self):
        return self.left.variables() | self.right.variables()

    def diff(self, i):
        a, b = self.left, self.right
        da, db = a.diff(i), b.diff(i)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        if self.op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
        # power with coordinate-free exponent
        return mul(mul(b, power(a, sub(b, ONE))), da)

    def source(self):
        a, b = self.left.source(), self.right.source()
        if self.op == "^":
            if isinstance(self.right, Const) and float(self.right.value).is_integer():
                return f"({a}**{int(self.right.value)})"
            return f"_pow({a}, {b})"
        return f"({a} {self.op} {b})"

    def __str__(self):
        prec = _PREC[self.op]
        if self.op == "^":
            return f"{_wrap(self.left, prec + 1)}^{_wrap(self.right, prec)}"
        right_prec = prec + 1 if self.op in "-/" else prec
        return f"{_wrap(self.left, prec)} {self.op} {_wrap(self.right, right_prec)}"


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def variables(self):
        return self.arg.variables()

    def diff(self, i):
        da = self.arg.diff(i)
        if self.name == "sin":
            outer = Func("cos", self.arg)
        elif self.name == "cos":
            outer = neg(Func("sin", self.arg))
        else:
            outer = self
        return mul(outer, da)

    def source(self):
        return f"_{self.name}({self.arg.source()})"

    def __str__(self):
        return f"{self.name}({self.arg})"


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _wrap(node, prec):
    if isinstance(node, Binary) and _PREC[node.op] < prec:
        return f"({node})"
    if isinstance(node, Neg) and prec > 3:
        return f"({node})"
    if isinstance(node, Const) and node.value < 0 and prec > 1:
        return f"({node})"
    return str(node)


ZERO = Const(0.0)
ONE = Const(1.0)


# Constructors with the trivial folding needed to keep derivatives small.

def _c(node):
    return node.value if isinstance(node, Const) else None


def add(a, b):
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Binary("+", a, b)


def sub(a, b):
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return Binary("-", a, b)


def mul(a, b):
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return ZERO
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    return Binary("*", a, b)


def div(a, b):
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None and cb != 0.0:
        return Const(ca / cb)
    if ca == 0.0:
        return ZERO
    if cb == 1.0:
        return a
    return Binary("/", a, b)


def power(a, b):
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        try:
            return Const(math.pow(ca, cb))
        except (ValueError, OverflowError):
            pass
    if cb == 0.0:
        return ONE
    if cb == 1.0:
        return a
    return Binary("^", a, b)


def neg(a):
    ca = _c(a)
    if ca is not None:
        return Const(-ca)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", position=pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            found = repr(text) if kind != "end" else "end of input"
            raise ParseError(f"expected {value!r}, found {found}", position=pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", position=pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text in ("+", "-"):
            self.take()
            arg = self.unary()
            return neg(arg) if text == "-" else arg
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text in ("^", "**"):
            self.take()
            exponent = self.unary()
            if not exponent.is_constant():
                raise ParseError("exponent must not depend on coordinates", position=pos)
            return power(base, exponent)
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in CONSTANTS:
                return Const(CONSTANTS[text])
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(text, arg)
            m = re.fullmatch(r"x(\d+)", text)
            if m:
                index = int(m.group(1))
                if self.dim is not None and index >= self.dim:
                    raise ParseError(
                        f"coordinate {text} out of range for dimension {self.dim}",
                        position=pos,
                    )
                return Var(index)
            raise ParseError(f"unknown name {text!r}", position=pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = repr(text) if kind != "end" else "end of input"
        raise ParseError(f"unexpected {found}", position=pos)


def parse_expr(text: str, dim: int | None = None) -> Expr:
    """Parse ``text``; coordinate indices are checked against ``dim`` if given."""
    return _Parser(text, dim).parse()


# ---------------------------------------------------------------------------
# Evaluation

def _np_pow(a, b):
    return np.power(a, b)


_SCALAR_NS = {
    "_sin": math.sin,
    "_cos": math.cos,
    "_exp": math.exp,
    "_pow": math.pow,
}
_ARRAY_NS = {
    "_sin": np.sin,
    "_cos": np.cos,
    "_exp": np.exp,
    "_pow": _np_pow,
}


class CompiledVector:
    """Callable evaluating a tuple of expressions.

    ``scalar(x)`` works on a length-n sequence of floats and returns a tuple;
    ``array(x)`` accepts arrays of shape ``(n, ...)`` and returns an array of
    shape ``(len(exprs), ...)``.  Both translate arithmetic failures into
    :class:`EvaluationError`.
    """

    def __init__(self, exprs: Sequence[Expr]):
        self.exprs = tuple(exprs)
        body = ", ".join(e.source() for e in self.exprs)
        code = f"lambda x: ({body},)"
        self._scalar = eval(code, dict(_SCALAR_NS))  # noqa: S307 - generated source
        self._array = eval(code, dict(_ARRAY_NS))  # noqa: S307

    def scalar(self, x):
        try:
            return self._scalar(x)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationError(f"evaluation failed at {list(x)}: {exc}") from None

    def array(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[1:]
        with np.errstate(all="raise"):
            try:
                values = self._array(x)
            except FloatingPointError as exc:
                raise EvaluationError(f"evaluation failed: {exc}") from None
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in values])


def compile_vector(exprs: Sequence[Expr]) -> CompiledVector:
    return CompiledVector(exprs)


def evaluate(expr: Expr, x) -> float:
    """Evaluate a single expression at a point (convenience, not fast)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return CompiledVector([expr]).scalar(list(x))[0]
    return CompiledVector([expr]).array(x)[0]


def gradient(expr: Expr, dim: int) -> tuple[Expr, ...]:
    return tuple(expr.diff(i) for i in range(dim))
