"""A small arithmetic expression language for scenario files.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary ('*' unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

``NAME`` is ``t`` or an action component ``x<i>_<k>`` (1-based player and
component, the component may also be a letter ``a``, ``b``, ...).  ``FUNC``
is ``sin`` or ``cos``.  Exponents must be numeric constants.

Parsed trees can be differentiated symbolically and compiled to numpy
callables ``f(t, X)`` that broadcast over leading axes of ``X`` (shape
``(..., N, d)``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExpressionSyntaxError",
    "Num",
    "Var",
    "Neg",
    "Add",
    "Mul",
    "Pow",
    "Call",
    "parse",
    "diff",
    "variables",
    "to_source",
    "compile_expr",
]


class ExpressionSyntaxError(ValueError):
    def __init__(self, message: str, column: int, line: int | None = None):
        self.message = message
        self.column = column
        self.line = line
        where = f"line {line}, column {column}" if line is not None else f"column {column}"
        super().__init__(f"{where}: {message}")

    def at(self, line: int, column_offset: int) -> ExpressionSyntaxError:
        return ExpressionSyntaxError(self.message, self.column + column_offset, line)


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    """``t`` (player = None) or component ``k`` of player ``player`` (0-based)."""

    name: str
    player: int | None = None
    comp: int | None = None


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Add:
    left: object
    right: object
    minus: bool = False


@dataclass(frozen=True)
class Mul:
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


FUNCTIONS = ("sin", "cos")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*^()]))"
)
_COMPONENT = re.compile(r"x(\d+)_([0-9]+|[a-z])$")


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            col = pos + len(src[pos:]) - len(src[pos:].lstrip()) + 1
            raise ExpressionSyntaxError(f"unexpected character {src[col - 1]!r}", col)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind) + 1
        if kind == "op" and text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src) + 1))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, tx, col = self.take()
        if tx != text:
            found = "end of input" if kind == "end" else repr(tx)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", col)

    def parse(self):
        node = self.expr()
        kind, tx, col = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {tx!r}", col)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, _ = self.take()
            node = Add(node, self.term(), minus=(op == "-"))
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] == "*":
            self.take()
            node = Mul(node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            _, _, col = self.take()
            exponent = self.unary()
            value = _constant_value(exponent)
            if value is None:
                raise ExpressionSyntaxError("exponent must be a numeric constant", col + 1)
            return Pow(base, value)
        return base

    def atom(self):
        kind, tx, col = self.take()
        if kind == "num":
            return Num(float(tx))
        if kind == "name":
            if tx in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tx, arg)
            if tx == "t":
                return Var("t")
            m = _COMPONENT.match(tx)
            if m is None:
                raise ExpressionSyntaxError(f"unknown name {tx!r}", col)
            player = int(m.group(1)) - 1
            c = m.group(2)
            comp = int(c) - 1 if c.isdigit() else ord(c) - ord("a")
            if player < 0 or comp < 0:
                raise ExpressionSyntaxError(f"indices are 1-based in {tx!r}", col)
            return Var(tx, player, comp)
        if tx == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(tx)
        raise ExpressionSyntaxError(f"unexpected {found}", col)


def parse(src: str):
    """Parse ``src`` into an expression tree."""
    return _Parser(str(src)).parse()


def _constant_value(node) -> float | None:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg):
        v = _constant_value(node.arg)
        return None if v is None else -v
    if isinstance(node, Pow):
        v = _constant_value(node.base)
        if v is None or (v < 0 and not float(node.exponent).is_integer()):
            return None
        return float(v**node.exponent)
    return None


def variables(node) -> set[Var]:
    if isinstance(node, Var):
        return {node}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.arg)
    if isinstance(node, Pow):
        return variables(node.base)
    return variables(node.left) | variables(node.right)


# --- symbolic differentiation ---------------------------------------------

ZERO = Num(0.0)
ONE = Num(1.0)


def _add(a, b, minus=False):
    if b == ZERO:
        return a
    if a == ZERO:
        return Neg(b) if minus else b
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value if minus else a.value + b.value)
    return Add(a, b, minus)


def _mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Mul(a, b)


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def diff(node, player: int, comp: int):
    """Derivative of ``node`` with respect to action component ``(player, comp)``."""
    if isinstance(node, Num):
        return ZERO
    if isinstance(node, Var):
        return ONE if (node.player, node.comp) == (player, comp) else ZERO
    if isinstance(node, Neg):
        return _neg(diff(node.arg, player, comp))
    if isinstance(node, Add):
        return _add(diff(node.left, player, comp), diff(node.right, player, comp), node.minus)
    if isinstance(node, Mul):
        return _add(
            _mul(diff(node.left, player, comp), node.right),
            _mul(node.left, diff(node.right, player, comp)),
        )
    if isinstance(node, Pow):
        db = diff(node.base, player, comp)
        if db == ZERO:
            return ZERO
        n = node.exponent
        inner = ONE if n == 1.0 else (node.base if n == 2.0 else Pow(node.base, n - 1.0))
        return _mul(_mul(Num(n), inner), db)
    if isinstance(node, Call):
        da = diff(node.arg, player, comp)
        if da == ZERO:
            return ZERO
        if node.func == "sin":
            return _mul(Call("cos", node.arg), da)
        return _mul(_neg(Call("sin", node.arg)), da)
    raise TypeError(f"unknown node {node!r}")


# --- printing and compilation ----------------------------------------------


def to_source(node) -> str:
    """Render as Python/numpy source over ``t`` and the profile array ``X``."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        if node.player is None:
            return "t"
        return f"X[..., {node.player}, {node.comp}]"
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, Add):
        op = "-" if node.minus else "+"
        return f"({to_source(node.left)} {op} {to_source(node.right)})"
    if isinstance(node, Mul):
        return f"({to_source(node.left)} * {to_source(node.right)})"
    if isinstance(node, Pow):
        return f"({to_source(node.base)} ** {node.exponent!r})"
    if isinstance(node, Call):
        return f"_{node.func}({to_source(node.arg)})"
    raise TypeError(f"unknown node {node!r}")


def to_text(node) -> str:
    """Render back into the scenario expression language."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        if node.player is None:
            return "t"
        return f"x{node.player + 1}_{node.comp + 1}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, Add):
        op = "-" if node.minus else "+"
        return f"({to_text(node.left)} {op} {to_text(node.right)})"
    if isinstance(node, Mul):
        return f"({to_text(node.left)} * {to_text(node.right)})"
    if isinstance(node, Pow):
        return f"({to_text(node.base)} ^ {node.exponent!r})"
    return f"{node.func}({to_text(node.arg)})"


_NAMESPACE = {"_sin": np.sin, "_cos": np.cos, "__builtins__": {}}


def compile_expr(node):
    """Compile a tree into ``f(t, X) -> ndarray`` broadcasting over batch axes.

    The result always has shape ``broadcast(shape(t), X.shape[:-2])``, even
    for constant expressions.
    """
    src = to_source(node)
    # Source comes from our own AST, never from raw user text.
    raw = eval(f"lambda t, X: {src}", dict(_NAMESPACE))

    def f(t, X):
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.asarray(raw(t, X), dtype=float)
        shape = np.broadcast_shapes(t.shape, X.shape[:-2])
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    f.source = src
    return f
