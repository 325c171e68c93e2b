"""Boundary-data expressions.

A small recursive-descent parser for expressions such as ``"min(1, abs(x))"``
or ``"0.5*x^2 - 0.5"``.  Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' power)?          # exponent must fold to an int >= 0
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Variables are ``x`` and ``y``; functions are ``abs``, ``min`` and ``max``.
Evaluation is vectorized over numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("x", "y")
FUNCTIONS = {"abs": (1, 1), "min": (2, None), "max": (2, None)}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


class ExprError(ValueError):
    """Lexing, parsing or evaluation error, located in the source string."""

    def __init__(self, msg: str, src: str = "", pos: int = 0):
        self.src = src
        self.pos = pos
        before = src[:pos]
        self.line = before.count("\n") + 1
        self.col = pos - (before.rfind("\n") + 1)
        super().__init__(f"{msg} (line {self.line}, column {self.col})")


# syntax tree nodes -----------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: int = 0


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(src: str) -> list[Token]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprError(f"unexpected character {src[bad]!r}", src, bad)
        kind = m.lastgroup
        tokens.append(Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(Token("eof", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = tokenize(src)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        what = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ExprError(f"{msg}, got {what}", self.src, tok.pos)

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            return self.advance()
        return None

    def expect(self, text):
        if self.accept(text) is None:
            self.error(f"expected {text!r}")

    def parse(self):
        node = self.expr()
        if self.tok.kind != "eof":
            self.error("unexpected token")
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance()
            node = BinOp(op.text, node, self.term(), op.pos)
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance()
            node = BinOp(op.text, node, self.unary(), op.pos)
        return node

    def unary(self):
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        op = self.accept("^")
        if op is None:
            return base
        exp_tok = self.tok
        exponent = self.power()
        try:
            value = _fold(exponent)
        except _NotConstant:
            raise ExprError("exponent must be a constant", self.src, exp_tok.pos) from None
        if value < 0 or value != int(value):
            raise ExprError(
                f"exponent must be a non-negative integer, got {value:g}", self.src, exp_tok.pos
            )
        return Pow(base, int(value))

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                lo, hi = FUNCTIONS[tok.text]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ExprError(
                        f"{tok.text}() takes {lo if hi == lo else f'at least {lo}'} "
                        f"argument(s), got {len(args)}",
                        self.src,
                        tok.pos,
                    )
                return Call(tok.text, tuple(args))
            if tok.text in VARIABLES:
                return Var(tok.text)
            raise ExprError(f"unknown name {tok.text!r}", self.src, tok.pos)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        self.error("expected a number, name or '('")


class _NotConstant(Exception):
    pass


def _fold(node) -> float:
    if isinstance(node, Var):
        raise _NotConstant
    return float(_eval(node, {}))


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise _NotConstant
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Pow):
        return _eval(node.base, env) ** node.exponent
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        if node.func == "abs":
            return np.abs(args[0])
        red = np.minimum if node.func == "min" else np.maximum
        out = args[0]
        for a in args[1:]:
            out = red(out, a)
        return out
    left = _eval(node.left, env)
    right = _eval(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if np.any(np.asarray(right) == 0):
        raise ZeroDivisionError(node.pos)
    return left / right


def _variables(node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Num,)):
        return set()
    if isinstance(node, Neg):
        return _variables(node.arg)
    if isinstance(node, Pow):
        return _variables(node.base)
    if isinstance(node, Call):
        return set().union(*(_variables(a) for a in node.args))
    return _variables(node.left) | _variables(node.right)


@dataclass(frozen=True)
class Expression:
    src: str
    tree: object

    @property
    def variables(self) -> set[str]:
        return _variables(self.tree)

    def __call__(self, x=0.0, y=0.0):
        """Evaluate at scalar or array arguments.

        Raises ExprError on division by zero or a non-finite result.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        try:
            with np.errstate(over="raise", invalid="raise"):
                out = _eval(self.tree, {"x": x, "y": y})
        except ZeroDivisionError as exc:
            raise ExprError("division by zero", self.src, exc.args[0]) from None
        except FloatingPointError as exc:
            raise ExprError(f"floating point error: {exc}", self.src, 0) from None
        out = np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape)
        return out.copy() if out.ndim else float(out)


def parse_expr(src: str) -> Expression:
    """Parse ``src`` into an :class:`Expression`."""
    return Expression(src, _Parser(src).parse())
