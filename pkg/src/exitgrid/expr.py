"""Arithmetic expressions over state variables ``x1..xd`` and controls ``u1..um``.

Expressions are parsed into a small AST, printed back to text, and compiled to
numpy callables so that dynamics and costs can be evaluated on whole grids at
once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, ExpressionSyntaxError, UnknownIdentifierError

FUNCTIONS = {
    "sin": (1, 1),
    "cos": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "cbrt": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

_VAR_RE = re.compile(r"^([xu])([1-9][0-9]*)$")
_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)

# binding strength used by the printer
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


class Expr:
    """Base class of AST nodes."""

    prec = _PREC["atom"]

    def __str__(self) -> str:
        return self.to_text()

    def to_text(self) -> str:
        raise NotImplementedError

    def _code(self) -> str:
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    @cached_property
    def _compiled(self) -> Callable:
        src = f"def _fn(X, U):\n    return {self._code()}\n"
        namespace = {"np": np, "_min": _nmin, "_max": _nmax}
        exec(compile(src, "<expr>", "exec"), namespace)
        return namespace["_fn"]

    def __call__(self, X: Sequence, U: Sequence = ()) -> np.ndarray:
        """Evaluate with ``X[i]`` bound to ``x{i+1}`` and ``U[j]`` to ``u{j+1}``.

        Components may be arrays; they are broadcast against each other.
        """
        with np.errstate(invalid="raise", divide="raise"):
            try:
                return self._compiled(X, U)
            except FloatingPointError as exc:
                raise EvaluationError(f"cannot evaluate {self.to_text()!r}: {exc}") from exc
            except IndexError as exc:
                raise EvaluationError(
                    f"{self.to_text()!r} references a variable outside the supplied dimensions"
                ) from exc

    def evaluate(self, **values: float) -> float:
        """Scalar convenience: ``e.evaluate(x1=0.5, u1=1.0)``."""
        xs, us = _split_named(values)
        return float(self(xs, us))


def _split_named(values: dict[str, float]) -> tuple[list, list]:
    xs: dict[int, float] = {}
    us: dict[int, float] = {}
    for key, val in values.items():
        m = _VAR_RE.match(key)
        if not m:
            raise UnknownIdentifierError(key, 0)
        (xs if m.group(1) == "x" else us)[int(m.group(2)) - 1] = float(val)
    nx = max(xs, default=-1) + 1
    nu = max(us, default=-1) + 1
    return [np.float64(xs.get(i, 0.0)) for i in range(nx)], [np.float64(us.get(i, 0.0)) for i in range(nu)]


def _nmin(*args):
    out = args[0]
    for a in args[1:]:
        out = np.minimum(out, a)
    return out


def _nmax(*args):
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


@dataclass(frozen=True, eq=False)
class Num(Expr):
    value: float

    def to_text(self) -> str:
        if self.value < 0 or (self.value == 0 and math.copysign(1.0, self.value) < 0):
            return f"({self.value!r})"
        v = float(self.value)
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)

    def _code(self) -> str:
        return f"np.float64({float(self.value)!r})"

    def variables(self) -> set[str]:
        return set()


@dataclass(frozen=True, eq=False)
class Var(Expr):
    name: str

    def to_text(self) -> str:
        return self.name

    def _code(self) -> str:
        kind, idx = self.name[0], int(self.name[1:]) - 1
        return f"{'X' if kind == 'x' else 'U'}[{idx}]"

    def variables(self) -> set[str]:
        return {self.name}


@dataclass(frozen=True, eq=False)
class Neg(Expr):
    operand: Expr
    prec = _PREC["neg"]

    def to_text(self) -> str:
        inner = self.operand.to_text()
        if self.operand.prec < self.prec:
            inner = f"({inner})"
        return f"-{inner}"

    def _code(self) -> str:
        return f"(-({self.operand._code()}))"

    def variables(self) -> set[str]:
        return self.operand.variables()


@dataclass(frozen=True, eq=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self) -> int:  # type: ignore[override]
        return _PREC[self.op]

    def to_text(self) -> str:
        lhs, rhs = self.left.to_text(), self.right.to_text()
        if self.op == "^":
            # right-associative; the base binds tighter than unary minus
            if self.left.prec <= self.prec:
                lhs = f"({lhs})"
            if self.right.prec < _PREC["neg"]:
                rhs = f"({rhs})"
            return f"{lhs}^{rhs}"
        if self.left.prec < self.prec:
            lhs = f"({lhs})"
        # parenthesize equal precedence on the right so the tree shape survives
        if self.right.prec <= self.prec:
            rhs = f"({rhs})"
        return f"{lhs} {self.op} {rhs}"

    def _code(self) -> str:
        a, b = self.left._code(), self.right._code()
        if self.op == "^":
            return f"np.power({a}, {b})"
        return f"({a} {self.op} {b})"

    def variables(self) -> set[str]:
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True, eq=False)
class Call(Expr):
    func: str
    args: tuple[Expr, ...]

    def to_text(self) -> str:
        return f"{self.func}({', '.join(a.to_text() for a in self.args)})"

    def _code(self) -> str:
        args = ", ".join(a._code() for a in self.args)
        if self.func in ("min", "max"):
            return f"_{self.func}({args})"
        return f"np.{self.func}({args})"

    def variables(self) -> set[str]:
        out: set[str] = set()
        for a in self.args:
            out |= a.variables()
        return out


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if not m:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok: tuple[str, str, int], what: str = "") -> None:
        shown = tok[1] if tok[0] != "end" else "end of input"
        msg = f"unexpected {shown!r}" + (f", expected {what}" if what else "")
        raise ExpressionSyntaxError(msg, tok[2], self.text)

    def expect(self, value: str) -> None:
        tok = self.advance()
        if tok[1] != value or tok[0] == "end":
            self.fail(tok, repr(value))

    def parse(self) -> Expr:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail(tok, "operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.advance()
        kind, val, pos = tok
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                lo, hi = FUNCTIONS[val]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ExpressionSyntaxError(
                        f"{val}() takes {lo}{'' if hi == lo else '+'} argument(s), got {len(args)}", pos, self.text
                    )
                return Call(val, tuple(args))
            if _VAR_RE.match(val):
                return Var(val)
            raise UnknownIdentifierError(val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail(tok, "number, variable, function or '('")
        raise AssertionError  # unreachable


def parse_expression(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    >>> parse_expression("x1^2 + x2^2 - 1").evaluate(x1=1.0, x2=0.0)
    0.0
    """
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0, text or "")
    return _Parser(text).parse()


def as_expression(value: str | float | int | Expr) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value)) if value >= 0 else Neg(Num(-float(value)))
    return parse_expression(str(value))
