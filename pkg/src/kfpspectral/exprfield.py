"""Closed-form field specifications with exact first and second derivatives.

The electric potential V and the magnetic components enter the toolkit as
strings in a small expression language (variables ``x1..xd``, the binary
operators ``+ - * / ^``, unary minus, and ``sin cos exp sqrt log``).  Parsed
expressions are immutable ASTs; evaluation is reentrant and safe for
concurrent shared reads.  Derivatives are produced by second-order
forward-mode automatic differentiation, so gradients and Hessians are exact
for the expression (no finite differencing anywhere in the core).

Precedence, tightest first: ``^`` (right associative), unary minus,
``* /``, ``+ -`` (left associative).  Integer powers are expanded by
repeated multiplication; a non-integer power of a negative base is a
domain error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParseError",
    "DimensionError",
    "DomainError",
    "Expression",
    "parse",
    "to_string",
    "eval_value",
    "eval_with_derivatives",
    "FieldSpec",
    "japanese_bracket_grad",
    "FIELD_CATALOG",
]


class ParseError(ValueError):
    """Syntax error; carries the byte offset of the offending token."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DimensionError(ParseError):
    """Reference to a variable x_k with k exceeding the declared dimension."""


class DomainError(ArithmeticError):
    """Evaluation left the domain (sqrt/log of a nonpositive value, etc.)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, so Var(1) is x1


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    fn: str  # sin cos exp sqrt log
    arg: "Expression"


Expression = Num | Var | Neg | BinOp | Call

_FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # skip leading whitespace manually to report the right offset
            stripped = len(text) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[stripped]!r}", stripped)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dimension):
        self.text = text
        self.dimension = dimension
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}", off)
        return self.advance()

    # expr := term (('+'|'-') term)*          left associative
    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    # term := unary (('*'|'/') unary)*        left associative
    def term(self):
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.unary())
            else:
                return node

    # unary := '-' unary | power
    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    # power := atom ('^' unary)?              right associative, binds above unary -
    def power(self):
        node = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return BinOp("^", node, self.unary())
        return node

    def atom(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            m = re.fullmatch(r"x(\d+)", text)
            if m:
                k = int(m.group(1))
                if not 1 <= k <= self.dimension:
                    raise DimensionError(
                        f"variable {text} out of range for dimension {self.dimension}", off
                    )
                return Var(k)
            if text in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            raise ParseError(f"unknown name {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError("expected a value", off)


def parse(text, dimension):
    """Parse an expression string over x1..xd into an immutable AST."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    p = _Parser(text, dimension)
    node = p.expr()
    kind, tok, off = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input {tok!r}", off)
    return node


# ---------------------------------------------------------------------------
# Pretty printing (round-trips through parse)

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _print(node):
    # returns (text, precedence of outermost construct)
    if isinstance(node, Num):
        return repr(node.value), _PREC["atom"]
    if isinstance(node, Var):
        return f"x{node.index}", _PREC["atom"]
    if isinstance(node, Neg):
        inner, prec = _print(node.arg)
        if prec < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}", _PREC["neg"]
    if isinstance(node, Call):
        inner, _ = _print(node.arg)
        return f"{node.fn}({inner})", _PREC["atom"]
    if isinstance(node, BinOp):
        lt, lp = _print(node.left)
        rt, rp = _print(node.right)
        prec = _PREC[node.op]
        if node.op == "^":
            # right associative, and unary minus on the right is legal
            if lp < _PREC["atom"]:
                lt = f"({lt})"
            if rp < _PREC["neg"]:
                rt = f"({rt})"
        else:
            if lp < prec:
                lt = f"({lt})"
            # - and / do not associate on the right
            if rp < prec or (rp == prec and node.op in "-/"):
                rt = f"({rt})"
        return f"{lt}{node.op}{rt}", prec
    raise TypeError(f"not an expression node: {node!r}")


def to_string(node):
    """Render an AST back to the expression language."""
    return _print(node)[0]


# ---------------------------------------------------------------------------
# Evaluation: plain values and second-order forward-mode AD

def _finite(x):
    if not math.isfinite(x):
        raise DomainError("non-finite value during evaluation")
    return x


def eval_value(node, x):
    """Evaluate at a point, values only (used for collocation sampling)."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(x[node.index - 1])
    if isinstance(node, Neg):
        return -eval_value(node.arg, x)
    if isinstance(node, BinOp):
        a = eval_value(node.left, x)
        if node.op == "^":
            return _pow_value(a, node.right, x)
        b = eval_value(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    if isinstance(node, Call):
        u = eval_value(node.arg, x)
        return _finite(_call_value(node.fn, u))
    raise TypeError(f"not an expression node: {node!r}")


def _call_value(fn, u):
    if fn == "sin":
        return math.sin(u)
    if fn == "cos":
        return math.cos(u)
    if fn == "exp":
        return math.exp(u)
    if fn == "sqrt":
        if u < 0.0:
            raise DomainError("sqrt of a negative value")
        return math.sqrt(u)
    if u <= 0.0:
        raise DomainError("log of a nonpositive value")
    return math.log(u)


def _pow_value(a, exp_node, x):
    if isinstance(exp_node, Num) and float(exp_node.value).is_integer():
        n = int(exp_node.value)
        if n < 0 and a == 0.0:
            raise DomainError("zero raised to a negative power")
        return a ** n
    b = eval_value(exp_node, x)
    if a <= 0.0:
        raise DomainError("non-integer power of a nonpositive base")
    return math.exp(b * math.log(a))


# AD carries (value, gradient, Hessian); the combination rules below keep the
# Hessian exactly symmetric (all rules are built from symmetric outer sums).

def _ad(node, x, d):
    if isinstance(node, Num):
        return node.value, np.zeros(d), np.zeros((d, d))
    if isinstance(node, Var):
        g = np.zeros(d)
        g[node.index - 1] = 1.0
        return float(x[node.index - 1]), g, np.zeros((d, d))
    if isinstance(node, Neg):
        v, g, h = _ad(node.arg, x, d)
        return -v, -g, -h
    if isinstance(node, BinOp):
        if node.op == "^":
            return _ad_pow(node, x, d)
        va, ga, ha = _ad(node.left, x, d)
        vb, gb, hb = _ad(node.right, x, d)
        if node.op == "+":
            return va + vb, ga + gb, ha + hb
        if node.op == "-":
            return va - vb, ga - gb, ha - hb
        if node.op == "*":
            return _ad_mul(va, ga, ha, vb, gb, hb)
        if vb == 0.0:
            raise DomainError("division by zero")
        q = va / vb
        gq = (ga - q * gb) / vb
        hq = (ha - q * hb - np.outer(gq, gb) - np.outer(gb, gq)) / vb
        return q, gq, hq
    if isinstance(node, Call):
        vu, gu, hu = _ad(node.arg, x, d)
        f, f1, f2 = _call_derivatives(node.fn, vu)
        return f, f1 * gu, f1 * hu + f2 * np.outer(gu, gu)
    raise TypeError(f"not an expression node: {node!r}")


def _ad_mul(va, ga, ha, vb, gb, hb):
    v = va * vb
    g = ga * vb + va * gb
    h = ha * vb + va * hb + np.outer(ga, gb) + np.outer(gb, ga)
    return v, g, h


def _ad_pow(node, x, d):
    exp_node = node.right
    if isinstance(exp_node, Num) and float(exp_node.value).is_integer():
        n = int(exp_node.value)
        va, ga, ha = _ad(node.left, x, d)
        if n == 0:
            return 1.0, np.zeros(d), np.zeros((d, d))
        neg = n < 0
        n = abs(n)
        v, g, h = va, ga.copy(), ha.copy()
        for _ in range(n - 1):
            v, g, h = _ad_mul(v, g, h, va, ga, ha)
        if neg:
            if v == 0.0:
                raise DomainError("zero raised to a negative power")
            one = (1.0, np.zeros(d), np.zeros((d, d)))
            q = 1.0 / v
            gq = -q * g / v
            hq = (-h * q - np.outer(gq, g) - np.outer(g, gq)) / v
            return q, gq, hq
        return v, g, h
    # general a^b = exp(b log a), a > 0
    va, ga, ha = _ad(node.left, x, d)
    if va <= 0.0:
        raise DomainError("non-integer power of a nonpositive base")
    vb, gb, hb = _ad(node.right, x, d)
    la, gla, hla = math.log(va), ga / va, ha / va - np.outer(ga, ga) / va**2
    ve, ge, he = _ad_mul(vb, gb, hb, la, gla, hla)
    f = math.exp(ve)
    return f, f * ge, f * he + f * np.outer(ge, ge)


def _call_derivatives(fn, u):
    if fn == "sin":
        return math.sin(u), math.cos(u), -math.sin(u)
    if fn == "cos":
        return math.cos(u), -math.sin(u), -math.cos(u)
    if fn == "exp":
        e = math.exp(u)
        return e, e, e
    if fn == "sqrt":
        if u <= 0.0:
            raise DomainError("sqrt domain: need a positive argument for derivatives")
        r = math.sqrt(u)
        return r, 0.5 / r, -0.25 / (r * u)
    if u <= 0.0:
        raise DomainError("log of a nonpositive value")
    return math.log(u), 1.0 / u, -1.0 / u**2


def eval_with_derivatives(node, x):
    """Evaluate value, gradient and Hessian at a point.

    Derivatives are exact for the expression; the Hessian is exactly
    symmetric entrywise.
    """
    x = np.asarray(x, dtype=float)
    v, g, h = _ad(node, x, len(x))
    _finite(v)
    return v, g, h


# ---------------------------------------------------------------------------
# Field specifications


@dataclass(frozen=True)
class FieldSpec:
    """Electric potential and magnetic components with their space domain.

    ``magnetic`` holds d(d-1)/2 expressions (one for d=2, three for d=3).
    ``period`` is the torus period L per coordinate, or None for fields on
    the whole space.  Torus fields are probe-checked for L-periodicity at
    construction.
    """

    dimension: int
    potential: Expression
    magnetic: tuple
    period: float | None = None

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        want = self.dimension * (self.dimension - 1) // 2
        if len(self.magnetic) != want:
            raise ValueError(
                f"need {want} magnetic components for d={self.dimension}, got {len(self.magnetic)}"
            )
        if self.period is not None:
            self._check_periodic()

    def _check_periodic(self, tol=1e-10, probes_per_axis=7):
        L = float(self.period)
        base = np.linspace(0.0, L, probes_per_axis, endpoint=False) + 0.05 * L
        grids = np.meshgrid(*([base] * self.dimension), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        for name, e in [("potential", self.potential)] + [
            (f"magnetic[{i}]", m) for i, m in enumerate(self.magnetic)
        ]:
            for k in range(self.dimension):
                shift = np.zeros(self.dimension)
                shift[k] = L
                for p in pts:
                    if abs(eval_value(e, p) - eval_value(e, p + shift)) > tol:
                        raise ValueError(f"{name} is not {L}-periodic in x{k + 1}")

    @classmethod
    def from_strings(cls, dimension, potential, magnetic, period=None):
        pot = parse(potential, dimension)
        mag = tuple(parse(m, dimension) for m in magnetic)
        return cls(dimension, pot, mag, period)

    def potential_at(self, x):
        return eval_value(self.potential, x)

    def grad_potential(self, x):
        _, g, _ = eval_with_derivatives(self.potential, x)
        return g

    def hessian_potential(self, x):
        _, _, h = eval_with_derivatives(self.potential, x)
        return h

    def magnetic_at(self, x):
        return np.array([eval_value(m, x) for m in self.magnetic])


def japanese_bracket_grad(spec, x):
    """Return sqrt(|grad V(x)|^2 + 1); always >= 1."""
    g = spec.grad_potential(x)
    return math.sqrt(float(g @ g) + 1.0)


_TWO_PI = 2.0 * math.pi

# Named fields used across the test suites and demos.  The first four are
# 2*pi-periodic and feed the torus assemblies; the rest live on the whole
# plane and feed the covering construction.
FIELD_CATALOG = {
    "free": FieldSpec.from_strings(2, "0", ["0"], period=_TWO_PI),
    "cosine_well": FieldSpec.from_strings(2, "cos(x1)+cos(x2)", ["0"], period=_TWO_PI),
    "cosine_magnetic": FieldSpec.from_strings(
        2, "cos(x1)+cos(x2)", ["0.5+0.25*cos(x1)"], period=_TWO_PI
    ),
    "mixed": FieldSpec.from_strings(
        2, "sin(x1)*cos(x2)", ["sin(x1)*sin(x2)"], period=_TWO_PI
    ),
    "cosine3d": FieldSpec.from_strings(
        3,
        "cos(x1)+cos(x2)+cos(x3)",
        ["0.3*cos(x2)", "0.2", "0.1*sin(x1)"],
        period=_TWO_PI,
    ),
    "harmonic": FieldSpec.from_strings(2, "0.5*(x1^2+x2^2)", ["0"]),
    "cosine_plane": FieldSpec.from_strings(2, "cos(x1)+cos(x2)", ["0"]),
    "tilted": FieldSpec.from_strings(2, "x1", ["0"]),
}
