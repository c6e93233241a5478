"""Small expression language for ``g(t)``, ``f(t, x)`` and ``L(t, x, u, z)``.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Names are the variables allowed by the caller (a subset of ``t, x, u, z``),
the constants ``pi`` and ``e``, and the functions ``sin``, ``cos``, ``exp``,
``ln``, ``sqrt``, ``abs`` (one argument) and ``pow`` (two arguments).

Evaluation accepts floats or numpy arrays as bindings and fails loudly on
domain errors instead of producing NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

VARIABLES = frozenset({"t", "x", "u", "z"})
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "ln": 1,
    "sqrt": 1,
    "abs": 1,
    "pow": 2,
}

Value = Union[float, np.ndarray]


class ExprError(ValueError):
    """Base class for parse and evaluation errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class EvalDomainError(ExprError):
    """Raised when an operation is evaluated outside of its real domain."""


class MissingBindingError(ExprError):
    pass


# {{{ syntax tree


class Node:
    def evaluate(self, env: Mapping[str, Value]) -> Value:
        raise NotImplementedError

    def variables(self) -> frozenset[str]:
        raise NotImplementedError

    def to_source(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Node):
    value: float

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return self.value

    def variables(self) -> frozenset[str]:
        return frozenset()

    def to_source(self) -> str:
        return repr(self.value) if self.value >= 0 else f"({self.value!r})"


@dataclass(frozen=True)
class Const(Node):
    name: str

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return CONSTANTS[self.name]

    def variables(self) -> frozenset[str]:
        return frozenset()

    def to_source(self) -> str:
        return self.name


@dataclass(frozen=True)
class Var(Node):
    name: str

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        try:
            return env[self.name]
        except KeyError:
            raise MissingBindingError(f"no value bound to '{self.name}'") from None

    def variables(self) -> frozenset[str]:
        return frozenset({self.name})

    def to_source(self) -> str:
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    operand: Node

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return -self.operand.evaluate(env)

    def variables(self) -> frozenset[str]:
        return self.operand.variables()

    def to_source(self) -> str:
        return f"(-{self.operand.to_source()})"


def _power(base: Value, expo: Value) -> Value:
    b = np.asarray(base, dtype=float)
    p = np.asarray(expo, dtype=float)
    bad = (b < 0) & (p != np.round(p))
    if np.any(bad):
        raise EvalDomainError("negative base raised to a non-integer power")
    if np.any((b == 0) & (p < 0)):
        raise EvalDomainError("zero raised to a negative power")
    result = np.power(b, p)
    return float(result) if result.ndim == 0 else result


def _divide(num: Value, den: Value) -> Value:
    if np.any(np.asarray(den) == 0):
        raise EvalDomainError("division by zero")
    return num / den


_BINARY = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _divide,
    "^": _power,
}


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return _BINARY[self.op](self.left.evaluate(env), self.right.evaluate(env))

    def variables(self) -> frozenset[str]:
        return self.left.variables() | self.right.variables()

    def to_source(self) -> str:
        return f"({self.left.to_source()} {self.op} {self.right.to_source()})"


def _ln(v: Value) -> Value:
    if np.any(np.asarray(v) <= 0):
        raise EvalDomainError("ln of a nonpositive number")
    return np.log(v)


def _sqrt(v: Value) -> Value:
    if np.any(np.asarray(v) < 0):
        raise EvalDomainError("sqrt of a negative number")
    return np.sqrt(v)


_CALLS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "abs": np.abs,
    "pow": _power,
}


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: tuple[Node, ...]

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        result = _CALLS[self.name](*(arg.evaluate(env) for arg in self.args))
        if isinstance(result, np.ndarray) and result.ndim == 0:
            return float(result)
        if isinstance(result, np.floating):
            return float(result)
        return result

    def variables(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for arg in self.args:
            out = out | arg.variables()
        return out

    def to_source(self) -> str:
        return f"{self.name}({', '.join(a.to_source() for a in self.args)})"


# }}}


# {{{ parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.lastgroup is None:
            offset = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {src[offset]!r}", offset)
        tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()

    tokens.append(_Token("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, allowed: frozenset[str]) -> None:
        self.tokens = _tokenize(src)
        self.pos = 0
        self.allowed = allowed

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.current
        if tok.text != text:
            found = tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", tok.offset)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.current
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.current.text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.current.text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.current.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.current.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.current
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))

        if tok.kind == "name":
            self.advance()
            if self.current.text == "(":
                return self.call(tok)
            if tok.text in self.allowed:
                return Var(tok.text)
            if tok.text in CONSTANTS:
                return Const(tok.text)
            if tok.text in FUNCTIONS:
                raise ArityError(f"function '{tok.text}' requires arguments", tok.offset)
            raise UnknownIdentifierError(f"unknown identifier '{tok.text}'", tok.offset)

        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node

        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.offset)

    def call(self, name: _Token) -> Node:
        if name.text not in FUNCTIONS:
            raise UnknownIdentifierError(f"unknown function '{name.text}'", name.offset)

        self.expect("(")
        if self.current.text == ")":
            self.advance()
            raise ArityError(f"'{name.text}' called without arguments", name.offset)
        args = [self.expr()]
        while self.current.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")

        arity = FUNCTIONS[name.text]
        if len(args) != arity:
            raise ArityError(
                f"'{name.text}' takes {arity} argument(s), got {len(args)}",
                name.offset,
            )
        return Call(name.text, tuple(args))


# }}}


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with the variables it may reference."""

    source: str
    tree: Node
    allowed_vars: frozenset[str]

    def __call__(self, **bindings: Value) -> Value:
        return evaluate(self, bindings)

    @property
    def variables(self) -> frozenset[str]:
        return self.tree.variables()

    def to_source(self) -> str:
        return self.tree.to_source()


def parse(src: str, allowed_vars: set[str] | frozenset[str] = VARIABLES) -> Expression:
    """Parse *src* into an :class:`Expression` restricted to *allowed_vars*.

    :raises ExprSyntaxError: with the byte offset of the offending token.
    """
    allowed = frozenset(allowed_vars)
    unknown = allowed - VARIABLES
    if unknown:
        raise ValueError(f"unsupported variables: {sorted(unknown)}")
    if not src.strip():
        raise ExprSyntaxError("empty expression", 0)

    return Expression(src, _Parser(src, allowed).parse(), allowed)


def evaluate(e: Expression, bindings: Mapping[str, Value]) -> Value:
    """Evaluate *e* with IEEE double arithmetic.

    Bindings may be floats or equally shaped numpy arrays.
    """
    missing = e.variables - set(bindings)
    if missing:
        raise MissingBindingError(f"missing bindings for {sorted(missing)}")

    env = {
        k: (np.asarray(v, dtype=float) if isinstance(v, (np.ndarray, list)) else float(v))
        for k, v in bindings.items()
        if k in e.variables
    }
    with np.errstate(all="ignore"):
        result = e.tree.evaluate(env)

    if isinstance(result, np.ndarray):
        if result.ndim == 0:
            return float(result)
        return result.astype(float, copy=False)
    return float(result)


def constant(value: float, allowed_vars: set[str] | frozenset[str] = VARIABLES) -> Expression:
    """Expression for a literal constant."""
    return Expression(repr(float(value)), Num(float(value)), frozenset(allowed_vars))
