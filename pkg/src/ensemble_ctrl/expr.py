"""Closed-form scalar expressions in a single parameter.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := ("-")? power
    power  := atom ("^" factor)?
    atom   := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

``^`` binds tighter than unary minus and is right-associative, so
``-2^2 == -4`` and ``2^3^2 == 512``.  The only free identifier is the
parameter name; ``pi`` and ``e`` are folded to constants at parse time.

Evaluation works on Python floats and on numpy arrays alike, which lets a
whole parameter grid be sampled in one pass.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expr", "Const", "Param", "Neg", "Binary", "Call",
    "ExprError", "ExprSyntaxError", "UnknownIdentifierError",
    "UnknownFunctionError", "ExprDomainError",
    "FUNCTIONS", "CONSTANTS", "parse", "evaluate", "to_text",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; ``offset`` is a UTF-8 byte offset."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class UnknownFunctionError(ExprSyntaxError):
    pass


class ExprDomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of an operation.

    ``node`` is the offending sub-expression.  When evaluating an array,
    ``index`` is the flat index of the first offending element.
    """

    def __init__(self, message: str, node: "Expr", index: int | None = None):
        self.node = node
        self.index = index
        super().__init__(f"{message} in '{to_text(node)}'")


# ----------------------------------------------------------------------------
# AST
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Const, Param, Neg, Binary, Call]


# ----------------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number, ident, op, end
    text: str
    pos: int  # character offset


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text
            )
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, parameter: str):
        self.text = text
        self.parameter = parameter
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: _Token | None = None, cls=ExprSyntaxError):
        tok = tok or self.tok
        raise cls(message, _byte_offset(self.text, tok.pos), self.text)

    def accept(self, *ops: str) -> str | None:
        if self.tok.kind == "op" and self.tok.text in ops:
            op = self.tok.text
            self.i += 1
            return op
        return None

    def expect(self, op: str) -> None:
        if self.accept(op) is None:
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self.error(f"expected {op!r}, found {found}")

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while (op := self.accept("+", "-")) is not None:
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while (op := self.accept("*", "/")) is not None:
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        if self.accept("-") is not None:
            return Neg(self.power())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^") is not None:
            return Binary("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            value = float(tok.text)
            if not math.isfinite(value):
                self.error("number out of range", tok)
            return Const(value)
        if tok.kind == "ident":
            self.i += 1
            if self.accept("(") is not None:
                if tok.text not in FUNCTIONS:
                    self.error(f"unknown function {tok.text!r}", tok, UnknownFunctionError)
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            if tok.text == self.parameter:
                return Param(tok.text)
            if tok.text in CONSTANTS:
                return Const(CONSTANTS[tok.text])
            if tok.text in FUNCTIONS:
                self.error(f"function {tok.text!r} needs an argument", tok)
            self.error(f"unknown identifier {tok.text!r}", tok, UnknownIdentifierError)
        if self.accept("(") is not None:
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected {tok.text!r}")


def parse(text: str, parameter: str = "beta") -> Expr:
    """Parse ``text`` into an expression tree over ``parameter``.

    Raises
    ------
    ExprSyntaxError
        On malformed input; ``offset`` is the UTF-8 byte offset of the
        offending token (the end of the text for truncated input).
    UnknownIdentifierError, UnknownFunctionError
        On names outside the parameter, ``pi``, ``e`` and `FUNCTIONS`.
    """
    if parameter in FUNCTIONS or parameter in CONSTANTS:
        raise ValueError(f"parameter name {parameter!r} is reserved")
    return _Parser(text, parameter).parse()


# ----------------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------------

def _first_bad(mask) -> int | None:
    flat = np.flatnonzero(np.asarray(mask))
    return int(flat[0]) if flat.size else None


def _check(bad, message: str, node: Expr):
    if np.any(bad):
        raise ExprDomainError(message, node, _first_bad(bad) if np.ndim(bad) else None)


def _eval(node: Expr, x):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Param):
        return x
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, Binary):
        lhs = _eval(node.left, x)
        rhs = _eval(node.right, x)
        op = node.op
        if op == "+":
            out = lhs + rhs
        elif op == "-":
            out = lhs - rhs
        elif op == "*":
            out = lhs * rhs
        elif op == "/":
            _check(np.asarray(rhs) == 0, "division by zero", node)
            out = np.divide(lhs, rhs)
        else:
            lhs_a, rhs_a = np.broadcast_arrays(np.asarray(lhs, float), np.asarray(rhs, float))
            _check((lhs_a == 0) & (rhs_a < 0), "division by zero", node)
            _check((lhs_a < 0) & (rhs_a != np.round(rhs_a)),
                   "negative base with non-integer exponent", node)
            with np.errstate(over="ignore"):
                out = np.power(lhs_a, rhs_a)
        _check(~np.isfinite(out), "non-finite result", node)
        return out
    if isinstance(node, Call):
        arg = _eval(node.arg, x)
        f = node.func
        if f == "log":
            _check(np.asarray(arg) <= 0, "log of non-positive value", node)
        elif f == "sqrt":
            _check(np.asarray(arg) < 0, "sqrt of negative value", node)
        with np.errstate(over="ignore"):
            out = getattr(np, f)(arg)
        _check(~np.isfinite(out), "non-finite result", node)
        return out
    raise TypeError(f"not an expression node: {node!r}")


_MATH = {"sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
         "log": math.log, "sqrt": math.sqrt, "abs": abs}


def _eval_scalar(node: Expr, x: float) -> float:
    """Same rules as ``_eval`` for a single float, without numpy overhead."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Param):
        return x
    if isinstance(node, Neg):
        return -_eval_scalar(node.operand, x)
    if isinstance(node, Binary):
        lhs = _eval_scalar(node.left, x)
        rhs = _eval_scalar(node.right, x)
        op = node.op
        try:
            if op == "+":
                out = lhs + rhs
            elif op == "-":
                out = lhs - rhs
            elif op == "*":
                out = lhs * rhs
            elif op == "/":
                if rhs == 0:
                    raise ExprDomainError("division by zero", node)
                out = lhs / rhs
            else:
                if lhs == 0 and rhs < 0:
                    raise ExprDomainError("division by zero", node)
                if lhs < 0 and rhs != round(rhs):
                    raise ExprDomainError("negative base with non-integer exponent", node)
                out = float(lhs) ** float(rhs)
        except OverflowError:
            out = math.inf
        if not math.isfinite(out):
            raise ExprDomainError("non-finite result", node)
        return out
    if isinstance(node, Call):
        arg = _eval_scalar(node.arg, x)
        f = node.func
        if f == "log" and arg <= 0:
            raise ExprDomainError("log of non-positive value", node)
        if f == "sqrt" and arg < 0:
            raise ExprDomainError("sqrt of negative value", node)
        try:
            out = float(_MATH[f](arg))
        except OverflowError:
            out = math.inf
        if not math.isfinite(out):
            raise ExprDomainError("non-finite result", node)
        return out
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(e: Expr, value):
    """Evaluate ``e`` at ``value`` (a float or an array of floats).

    Scalars return a Python float; arrays return an array broadcast to the
    shape of ``value``.
    """
    if np.ndim(value) == 0:
        return _eval_scalar(e, float(value))
    arr = np.asarray(value, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _eval(e, arr)
    return np.broadcast_to(np.asarray(out, dtype=float), arr.shape).copy()


# ----------------------------------------------------------------------------
# Printing
# ----------------------------------------------------------------------------

def _wrapped(node: Expr) -> str:
    text = to_text(node)
    if isinstance(node, (Param, Call)) or (isinstance(node, Const) and node.value >= 0):
        return text
    return f"({text})"


def to_text(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_text(e))`` rebuilds the same tree."""
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return f"-{_wrapped(e.operand)}"
    if isinstance(e, Binary):
        return f"{_wrapped(e.left)} {e.op} {_wrapped(e.right)}"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")
