"""A small arithmetic expression language over ``x1`` and ``x2``.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | 'x1' | 'x2' | 'abs' '(' expr ')' | '(' expr ')'

Evaluation is vectorised over numpy arrays of coordinates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np


class ExprError(ValueError):
    def __init__(self, message: str, position: int | None = None, text: str = ""):
        self.position = position
        if position is not None:
            pointer = f"\n  {text}\n  {' ' * position}^" if text else ""
            message = f"{message} at position {position}{pointer}"
        super().__init__(message)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_VARIABLES = ("x1", "x2")
_FUNCTIONS = {"abs": np.abs}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Num, Var, Neg, Call, BinOp]


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            what = "end of input" if kind == "end" else repr(val)
            raise ExprError(f"expected {value!r}, found {what}", pos, self.text)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected {val!r}", pos, self.text)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
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
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in _VARIABLES:
                return Var(val)
            if val in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            raise ExprError(f"unknown identifier {val!r}", pos, self.text)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ExprError(f"unexpected {what}", pos, self.text)


class Expr:
    """Parsed expression; call with coordinate arrays ``x1, x2``."""

    def __init__(self, text: str, tree: Node):
        self.text = text
        self.tree = tree

    def __repr__(self):
        return f"Expr({self.text!r})"

    @property
    def is_constant(self) -> bool:
        return _constant(self.tree)

    def __call__(self, x1, x2=None):
        if x2 is None:
            pts = np.asarray(x1, dtype=float)
            x1, x2 = pts[..., 0], pts[..., 1]
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        out = _eval(self.tree, {"x1": x1, "x2": x2})
        return np.broadcast_to(out, np.broadcast(x1, x2).shape).astype(float)


def _constant(node):
    if isinstance(node, Num):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, (Neg, Call)):
        return _constant(node.arg)
    return _constant(node.left) and _constant(node.right)


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        return _FUNCTIONS[node.func](_eval(node.arg, env))
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise ExprError("division by zero")
        return a / b
    with np.errstate(invalid="raise", divide="raise"):
        try:
            return np.power(a, b)
        except FloatingPointError as exc:
            raise ExprError(f"invalid power: {exc}") from None


def parse_expr(text: str) -> Expr:
    if not text or not text.strip():
        raise ExprError("empty expression", 0, text)
    return Expr(text, _Parser(text).parse())
