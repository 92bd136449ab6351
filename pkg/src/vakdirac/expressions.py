"""Expression language for user-defined scalar functions of (q, v).

Grammar (offsets in error messages are 1-based byte offsets):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

Identifiers are ``q0 .. q{n-1}``, ``v0 .. v{n-1}``, the function names
``sin cos tan sqrt exp log``, or - when a parameter map is supplied -
parameter names, which are baked in as constants at parse time.

Parsed expressions are compiled to a flat instruction tape evaluated by
the kernel backends; gradients and Hessians come from forward-mode dual
propagation over that tape, so they are exact up to rounding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _kernels
from ._kernels import ops
from .errors import (
    EvalDomainError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)

__all__ = ["Expression", "Tape", "parse", "Const", "Var", "Unary", "Binary"]

_FUNCTIONS = {"sin": ops.SIN, "cos": ops.COS, "tan": ops.TAN,
              "sqrt": ops.SQRT, "exp": ops.EXP, "log": ops.LOG}

_UNARY_NAMES = {v: k for k, v in _FUNCTIONS.items()} | {ops.NEG: "neg"}

_BINOPS = {"+": ops.ADD, "-": ops.SUB, "*": ops.MUL, "/": ops.DIV}


@dataclass(frozen=True)
class Const:
    value: float
    offset: int = 0


@dataclass(frozen=True)
class Var:
    kind: str  # "q" or "v"
    index: int
    offset: int = 0


@dataclass(frozen=True)
class Unary:
    op: str  # neg sin cos tan sqrt exp log
    child: "Node"
    offset: int = 0


@dataclass(frozen=True)
class Binary:
    op: str  # add sub mul div pow
    left: "Node"
    right: "Node"
    offset: int = 0


Node = Union[Const, Var, Unary, Binary]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)

_UNARY_OP_NAMES = {"neg": ops.NEG, "sin": ops.SIN, "cos": ops.COS,
                   "tan": ops.TAN, "sqrt": ops.SQRT, "exp": ops.EXP,
                   "log": ops.LOG}
_BINARY_OP_NAMES = {"add": ops.ADD, "sub": ops.SUB, "mul": ops.MUL,
                    "div": ops.DIV}


class _Tokenizer:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def next(self):
        """Returns (kind, value, offset) with a 1-based offset."""
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1
        if self.pos >= len(self.text):
            return ("eof", "", len(self.text) + 1)
        m = _TOKEN_RE.match(self.text, self.pos)
        if m is None or m.start(m.lastgroup) != self.pos:
            raise ExpressionSyntaxError(
                f"unexpected character {self.text[self.pos]!r}", self.pos + 1)
        offset = self.pos + 1
        self.pos = m.end()
        if m.group("num") is not None:
            return ("num", m.group("num"), offset)
        if m.group("ident") is not None:
            return ("ident", m.group("ident"), offset)
        return ("op", m.group("op"), offset)


_VAR_RE = re.compile(r"^([qv])(\d+)$")


class _Parser:
    def __init__(self, text, n, params=None):
        self.tok = _Tokenizer(text)
        self.n = n
        self.params = params or {}
        self.current = self.tok.next()

    def advance(self):
        self.current = self.tok.next()

    def expect_op(self, symbol):
        kind, value, offset = self.current
        if kind != "op" or value != symbol:
            raise ExpressionSyntaxError(f"expected {symbol!r}", offset)
        self.advance()

    def parse(self):
        node = self.expr()
        kind, value, offset = self.current
        if kind != "eof":
            raise ExpressionSyntaxError(f"unexpected {value!r}", offset)
        return node

    def expr(self):
        node = self.term()
        while self.current[0] == "op" and self.current[1] in "+-":
            op = "add" if self.current[1] == "+" else "sub"
            offset = self.current[2]
            self.advance()
            node = Binary(op, node, self.term(), offset)
        return node

    def term(self):
        node = self.unary()
        while self.current[0] == "op" and self.current[1] in "*/":
            op = "mul" if self.current[1] == "*" else "div"
            offset = self.current[2]
            self.advance()
            node = Binary(op, node, self.unary(), offset)
        return node

    def unary(self):
        if self.current[0] == "op" and self.current[1] == "-":
            offset = self.current[2]
            self.advance()
            return Unary("neg", self.unary(), offset)
        return self.power()

    def power(self):
        node = self.atom()
        if self.current[0] == "op" and self.current[1] == "^":
            offset = self.current[2]
            self.advance()
            # right-associative, and the exponent may carry a unary minus
            node = Binary("pow", node, self.unary(), offset)
        return node

    def atom(self):
        kind, value, offset = self.current
        if kind == "num":
            self.advance()
            return Const(float(value), offset)
        if kind == "ident":
            self.advance()
            if value in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Unary(value, arg, offset)
            m = _VAR_RE.match(value)
            if m:
                index = int(m.group(2))
                if index >= self.n:
                    raise UnknownIdentifierError(
                        f"coordinate index {index} out of range (n={self.n})",
                        offset)
                return Var(m.group(1), index, offset)
            if value in self.params:
                return Const(float(self.params[value]), offset)
            raise UnknownIdentifierError(f"unknown identifier {value!r}", offset)
        if kind == "op" and value == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        shown = value if value else "end of input"
        raise ExpressionSyntaxError(f"unexpected {shown}", offset)


@dataclass(frozen=True)
class Tape:
    """Flattened postorder instruction form of an expression."""

    code: np.ndarray       # (k, 3) int32
    consts: np.ndarray     # (c,) float64
    offsets: np.ndarray    # (k,) int32, 1-based source offsets
    n: int


def _compile(node, n):
    code = []
    consts = []
    offsets = []

    def const_index(x):
        consts.append(float(x))
        return len(consts) - 1

    def emit(op, a, b, offset):
        code.append((op, a, b))
        offsets.append(offset)
        return len(code) - 1

    def walk(nd):
        if isinstance(nd, Const):
            return emit(ops.CONST, const_index(nd.value), 0, nd.offset)
        if isinstance(nd, Var):
            return emit(ops.VARQ if nd.kind == "q" else ops.VARV,
                        nd.index, 0, nd.offset)
        if isinstance(nd, Unary):
            a = walk(nd.child)
            return emit(_UNARY_OP_NAMES[nd.op], a, 0, nd.offset)
        if isinstance(nd, Binary):
            if nd.op == "pow":
                a = walk(nd.left)
                if isinstance(nd.right, Const):
                    c = nd.right.value
                    if c == int(c) and abs(c) < 2**31:
                        return emit(ops.POWI, a, int(c), nd.offset)
                    return emit(ops.POWF, a, const_index(c), nd.offset)
                b = walk(nd.right)
                return emit(ops.POWV, a, b, nd.offset)
            a = walk(nd.left)
            b = walk(nd.right)
            return emit(_BINARY_OP_NAMES[nd.op], a, b, nd.offset)
        raise TypeError(f"not an AST node: {nd!r}")

    walk(node)
    return Tape(
        code=np.asarray(code, dtype=np.int32).reshape(len(code), 3),
        consts=np.asarray(consts, dtype=np.float64),
        offsets=np.asarray(offsets, dtype=np.int32),
        n=n,
    )


class Expression:
    """A parsed scalar function of (q, v) with exact forward-mode derivatives."""

    def __init__(self, root: Node, n: int, source: Optional[str] = None):
        self.root = root
        self.n = int(n)
        self.source = source
        self._tape = None

    @property
    def tape(self) -> Tape:
        if self._tape is None:
            self._tape = _compile(self.root, self.n)
        return self._tape

    def _check(self, status, instr):
        if status == ops.ERR_DOMAIN:
            t = self.tape
            op = _UNARY_NAMES.get(t.code[instr, 0], ops.NAMES[t.code[instr, 0]])
            raise EvalDomainError(op, None, int(t.offsets[instr]))

    def _coords(self, q, v):
        q = np.asarray(q, dtype=float).reshape(-1)
        v = np.asarray(v, dtype=float).reshape(-1)
        return q, v

    def value(self, q, v) -> float:
        q, v = self._coords(q, v)
        t = self.tape
        status, instr, val = _kernels.tape_value(t.code, t.consts, self.n, q, v)
        self._check(status, instr)
        return val

    def grad(self, q, v):
        """(value, df/dq, df/dv)."""
        q, v = self._coords(q, v)
        t = self.tape
        status, instr, val, g = _kernels.tape_grad(t.code, t.consts, self.n, q, v)
        self._check(status, instr)
        return val, g[:self.n], g[self.n:]

    def hess(self, q, v):
        """(value, grad over (q, v), Hessian over (q, v))."""
        q, v = self._coords(q, v)
        t = self.tape
        status, instr, val, g, H = _kernels.tape_hess(t.code, t.consts, self.n, q, v)
        self._check(status, instr)
        return val, g, H

    def __repr__(self):
        src = f" {self.source!r}" if self.source else ""
        return f"<Expression n={self.n}{src}>"


def parse(text: str, n: int, params=None) -> Expression:
    """Parse `text` into an `Expression` over coordinates q0..q{n-1}, v0..v{n-1}.

    `params`, when given, maps extra identifier names to numeric values
    that are substituted as constants.  Syntax errors report 1-based byte
    offsets.
    """
    root = _Parser(text, n, params).parse()
    return Expression(root, n, source=text)
