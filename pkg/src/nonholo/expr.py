"""Immutable scalar expressions over named variables.

The module provides a tiny infix grammar (``+ - * / ^``, ``sin``, ``cos``,
``sqrt``), exact partial differentiation, a light simplifier, a polynomial
normal form used internally to keep derivative towers small, compilation to
plain Python closures, and sampled zero tests.

Powers are restricted to constant integer or half-integer exponents;
``sqrt(u)`` is stored as ``u^(1/2)`` and ``a / b`` as ``a * b^(-1)``.
"""
from __future__ import annotations

import math
import re
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_SEED = 0x5EED

__all__ = [
    "DEFAULT_SEED",
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Mul",
    "Pow",
    "Call",
    "ExprError",
    "ParseError",
    "EvaluationError",
    "UnboundVariableError",
    "DomainError",
    "DivisionByZeroError",
    "ExpressionSizeError",
    "parse_expression",
    "to_text",
    "evaluate",
    "partial_derivative",
    "simplify",
    "expand",
    "normalize",
    "directional_derivative",
    "substitute",
    "free_symbols",
    "count_nodes",
    "probably_zero",
    "compile_function",
    "as_expr",
    "ZERO",
    "ONE",
]


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvaluationError(ExprError, ArithmeticError):
    pass


class UnboundVariableError(EvaluationError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else "unbound variable"


class DomainError(EvaluationError, ValueError):
    pass


class DivisionByZeroError(EvaluationError, ZeroDivisionError):
    pass


class ExpressionSizeError(ExprError):
    pass


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

# printing precedence levels
_ADD, _MUL, _UNARY, _POW, _ATOM = range(5)


class Expr:
    """Base node. Instances are immutable and hash structurally."""

    __slots__ = ("_hash", "_key", "_poly", "_free")

    def _fields(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        return type(self) is type(other) and self._fields() == other._fields()

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._fields())
            object.__setattr__(self, "_hash", h)
            return h

    def __setattr__(self, name, value):
        raise AttributeError("Expr nodes are immutable")

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    # arithmetic builds folded trees; the parser uses the raw builders instead
    def __add__(self, other):
        return _fold_add(self, as_expr(other))

    def __radd__(self, other):
        return _fold_add(as_expr(other), self)

    def __sub__(self, other):
        return _fold_add(self, _fold_neg(as_expr(other)))

    def __rsub__(self, other):
        return _fold_add(as_expr(other), _fold_neg(self))

    def __mul__(self, other):
        return _fold_mul(self, as_expr(other))

    def __rmul__(self, other):
        return _fold_mul(as_expr(other), self)

    def __truediv__(self, other):
        return _fold_mul(self, _fold_pow(as_expr(other), Fraction(-1)))

    def __rtruediv__(self, other):
        return _fold_mul(as_expr(other), _fold_pow(self, Fraction(-1)))

    def __neg__(self):
        return _fold_neg(self)

    def __pow__(self, exponent):
        return _fold_pow(self, _exponent(exponent))


def _init(node, **fields):
    for k, v in fields.items():
        object.__setattr__(node, k, v)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        _init(self, value=float(value))

    def _fields(self):
        return (self.value,)


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        _init(self, name=name)

    def _fields(self):
        return (self.name,)


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        _init(self, arg=arg)

    def _fields(self):
        return (self.arg,)


class Add(Expr):
    __slots__ = ("args",)

    def __init__(self, args: Sequence[Expr]):
        _init(self, args=tuple(args))

    def _fields(self):
        return self.args


class Mul(Expr):
    __slots__ = ("args",)

    def __init__(self, args: Sequence[Expr]):
        _init(self, args=tuple(args))

    def _fields(self):
        return self.args


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base: Expr, exp):
        _init(self, base=base, exp=_exponent(exp))

    def _fields(self):
        return (self.base, self.exp)


_FUNCTIONS = ("sin", "cos")


class Call(Expr):
    __slots__ = ("fn", "arg")

    def __init__(self, fn: str, arg: Expr):
        if fn not in _FUNCTIONS:
            raise ExprError(f"unknown function {fn!r}")
        _init(self, fn=fn, arg=arg)

    def _fields(self):
        return (self.fn, self.arg)


ZERO = Const(0.0)
ONE = Const(1.0)


def _exponent(e) -> Fraction:
    if isinstance(e, Expr):
        if isinstance(e, Const):
            e = e.value
        elif isinstance(e, Neg) and isinstance(e.arg, Const):
            e = -e.arg.value
        else:
            raise ExprError("exponent must be a constant")
    f = Fraction(e).limit_denominator(1000) if isinstance(e, float) else Fraction(e)
    if isinstance(e, float) and float(f) != e:
        raise ExprError(f"exponent {e!r} is not an integer or half-integer")
    if f.denominator not in (1, 2):
        raise ExprError(f"exponent {f} is not an integer or half-integer")
    return f


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        return parse_expression(x)
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


# ---------------------------------------------------------------------------
# raw builders (parser normal form)
# ---------------------------------------------------------------------------

def _raw_add(a: Expr, b: Expr) -> Expr:
    args = (a.args if isinstance(a, Add) else (a,)) + (b.args if isinstance(b, Add) else (b,))
    return Add(args)


def _raw_mul(a: Expr, b: Expr) -> Expr:
    args = (a.args if isinstance(a, Mul) else (a,)) + (b.args if isinstance(b, Mul) else (b,))
    return Mul(args)


def _raw_neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    return Neg(a)


def _raw_inv(b: Expr) -> Expr:
    if isinstance(b, Pow):
        return Pow(b.base, -b.exp)
    return Pow(b, -1)


def _raw_div(a: Expr, b: Expr) -> Expr:
    return _raw_mul(a, _raw_inv(b))


# ---------------------------------------------------------------------------
# folding builders (used by operator overloads)
# ---------------------------------------------------------------------------

def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def _fold_add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return _raw_add(a, b)


def _fold_mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, -1.0):
        return _fold_neg(b)
    if _is_const(b, -1.0):
        return _fold_neg(a)
    return _raw_mul(a, b)


def _fold_neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _fold_pow(b: Expr, e: Fraction) -> Expr:
    if e == 0:
        return ONE
    if e == 1:
        return b
    if isinstance(b, Const):
        return Const(_pow_value(b.value, e))
    if isinstance(b, Pow) and e.denominator == 1:
        return _fold_pow(b.base, b.exp * e)
    return Pow(b, e)


def _pow_value(b: float, e: Fraction) -> float:
    if e.denominator == 1:
        if b == 0.0 and e < 0:
            raise DivisionByZeroError("division by zero")
        return b ** int(e)
    if b < 0.0:
        raise DomainError(f"sqrt of negative value {b!r}")
    if b == 0.0 and e < 0:
        raise DivisionByZeroError("division by zero")
    # integer power of a correctly rounded root, so 1/sqrt(2) prints as such
    return math.sqrt(b) ** int(2 * e)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text: str):
        if not text.isascii():
            bad = next(i for i, ch in enumerate(text) if not ch.isascii())
            raise ParseError("non-ASCII character", len(text[:bad].encode()))
        self.text = text
        self.tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise ParseError(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.peek()
        if val != value or kind == "end":
            what = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {what}", off)
        return self.next()

    def parse(self) -> Expr:
        e = self.additive()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def additive(self) -> Expr:
        e = self.multiplicative()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.next()[1]
            rhs = self.multiplicative()
            e = _raw_add(e, rhs if op == "+" else _raw_neg(rhs))
        return e

    def multiplicative(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.next()[1]
            rhs = self.unary()
            e = _raw_mul(e, rhs) if op == "*" else _raw_div(e, rhs)
        return e

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return _raw_neg(self.unary())
        if kind == "op" and val == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        e = self.primary()
        while self.peek()[1] == "^" and self.peek()[0] == "op":
            self.next()
            off = self.peek()[2]
            try:
                e = Pow(e, self.exponent())
            except ExprError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(str(exc), off) from None
        return e

    def exponent(self) -> Fraction:
        kind, val, off = self.peek()
        sign = 1
        if kind == "op" and val in ("-", "+"):
            self.next()
            sign = -1 if val == "-" else 1
            kind, val, off = self.peek()
        if kind == "num":
            self.next()
            return sign * _exponent(float(val))
        if kind == "op" and val == "(":
            self.next()
            inner = self.additive()
            self.expect(")")
            try:
                value = evaluate(inner, {})
            except EvaluationError:
                raise ParseError("exponent must be a constant", off) from None
            return sign * _exponent(value)
        raise ParseError("expected exponent", off)

    def primary(self) -> Expr:
        kind, val, off = self.next()
        if kind == "num":
            return Const(float(val))
        if kind == "id":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in ("sin", "cos", "sqrt"):
                    raise ParseError(f"unknown function {val!r}", off)
                self.next()
                arg = self.additive()
                self.expect(")")
                if val == "sqrt":
                    return Pow(arg, Fraction(1, 2))
                return Call(val, arg)
            return Var(val)
        if kind == "op" and val == "(":
            e = self.additive()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", off)


def parse_expression(text: str) -> Expr:
    """Parse infix text into an expression tree.

    >>> to_text(parse_expression("sin(theta)*v_r"))
    'sin(theta) * v_r'
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _fmt_exponent(e: Fraction) -> str:
    if e.denominator == 1 and e >= 0:
        return str(e.numerator)
    return f"({e})"


def _level(e: Expr) -> int:
    if isinstance(e, Add):
        return _ADD
    if isinstance(e, Mul):
        return _MUL
    if isinstance(e, Neg):
        return _UNARY
    if isinstance(e, Const):
        return _UNARY if e.value < 0 or str(e.value).startswith("-") else _ATOM
    if isinstance(e, Pow):
        return _ATOM if e.exp == Fraction(1, 2) else _POW
    return _ATOM


def _p(e: Expr, ctx: int) -> str:
    s = _text(e)
    return f"({s})" if _level(e) < ctx else s


def _text(e: Expr) -> str:
    if isinstance(e, Const):
        if e.value < 0:
            return "-" + _fmt_number(-e.value)
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({_text(e.arg)})"
    if isinstance(e, Neg):
        return "-" + _p(e.arg, _UNARY)
    if isinstance(e, Pow):
        if e.exp == Fraction(1, 2):
            return f"sqrt({_text(e.base)})"
        return f"{_p(e.base, _ATOM)}^{_fmt_exponent(e.exp)}"
    if isinstance(e, Add):
        parts = [_p(e.args[0], _ADD + 1) if isinstance(e.args[0], Add) else _text(e.args[0])]
        for t in e.args[1:]:
            if isinstance(t, Neg):
                parts.append(" - " + _p(t.arg, _MUL))
            elif isinstance(t, Const) and t.value < 0:
                parts.append(" - " + _fmt_number(-t.value))
            else:
                parts.append(" + " + _p(t, _MUL))
        return "".join(parts)
    if isinstance(e, Mul):
        parts = [_p(e.args[0], _MUL + 1) if isinstance(e.args[0], (Add, Mul)) else _p(e.args[0], _MUL)]
        for f in e.args[1:]:
            if isinstance(f, Pow) and f.exp < 0 and not isinstance(f.base, Pow):
                inv = f.base if f.exp == -1 else Pow(f.base, -f.exp)
                parts.append(" / " + _p(inv, _UNARY))
            else:
                parts.append(" * " + _p(f, _UNARY if not isinstance(f, Mul) else _ATOM))
        return "".join(parts)
    raise TypeError(type(e))


def to_text(e: Expr) -> str:
    """Render an expression in the infix grammar; ``parse_expression`` inverts it."""
    return _text(e)


def _sort_key(e: Expr) -> str:
    try:
        return e._key
    except AttributeError:
        k = f"{type(e).__name__}:{_text(e)}"
        object.__setattr__(e, "_key", k)
        return k


# ---------------------------------------------------------------------------
# structural utilities
# ---------------------------------------------------------------------------

def free_symbols(e: Expr) -> frozenset:
    try:
        return e._free
    except AttributeError:
        pass
    if isinstance(e, Var):
        out = frozenset((e.name,))
    elif isinstance(e, Const):
        out = frozenset()
    elif isinstance(e, (Neg, Call)):
        out = free_symbols(e.arg)
    elif isinstance(e, Pow):
        out = free_symbols(e.base)
    else:
        out = frozenset().union(*(free_symbols(a) for a in e.args))
    object.__setattr__(e, "_free", out)
    return out


def count_nodes(e: Expr) -> int:
    if isinstance(e, (Const, Var)):
        return 1
    if isinstance(e, (Neg, Call)):
        return 1 + count_nodes(e.arg)
    if isinstance(e, Pow):
        return 1 + count_nodes(e.base)
    return 1 + sum(count_nodes(a) for a in e.args)


def substitute(e: Expr, mapping: Mapping[str, object]) -> Expr:
    """Replace variables by expressions or numbers (no simplification)."""
    repl = {k: as_expr(v) for k, v in mapping.items()}
    memo: dict = {}

    def go(n):
        if n in memo:
            return memo[n]
        if isinstance(n, Var):
            out = repl.get(n.name, n)
        elif isinstance(n, Const):
            out = n
        elif not (free_symbols(n) & repl.keys()):
            out = n
        elif isinstance(n, Neg):
            out = Neg(go(n.arg))
        elif isinstance(n, Call):
            out = Call(n.fn, go(n.arg))
        elif isinstance(n, Pow):
            out = Pow(go(n.base), n.exp)
        else:
            out = type(n)([go(a) for a in n.args])
        memo[n] = out
        return out

    return go(e)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate at a binding of every free variable.

    Raises ``UnboundVariableError``, ``DomainError`` (sqrt of a negative) or
    ``DivisionByZeroError``; never returns NaN silently.
    """
    memo: dict = {}

    def go(n):
        if n in memo:
            return memo[n]
        if isinstance(n, Const):
            v = n.value
        elif isinstance(n, Var):
            try:
                v = float(env[n.name])
            except KeyError:
                raise UnboundVariableError(f"unbound variable {n.name!r}") from None
        elif isinstance(n, Neg):
            v = -go(n.arg)
        elif isinstance(n, Add):
            v = math.fsum(go(a) for a in n.args)
        elif isinstance(n, Mul):
            v = 1.0
            for a in n.args:
                v *= go(a)
        elif isinstance(n, Pow):
            v = _pow_value(go(n.base), n.exp)
        else:
            v = math.sin(go(n.arg)) if n.fn == "sin" else math.cos(go(n.arg))
        memo[n] = v
        return v

    try:
        out = go(e)
    except OverflowError as exc:
        raise EvaluationError(f"overflow: {exc}") from None
    if not math.isfinite(out):
        raise EvaluationError("non-finite result")
    return out


# ---------------------------------------------------------------------------
# simplification
# ---------------------------------------------------------------------------

def _split_coeff(t: Expr):
    """term -> (coefficient, tuple of non-constant factors)"""
    if isinstance(t, Const):
        return t.value, ()
    if isinstance(t, Neg):
        c, rest = _split_coeff(t.arg)
        return -c, rest
    if isinstance(t, Mul):
        c = 1.0
        rest = []
        for f in t.args:
            if isinstance(f, Const):
                c *= f.value
            else:
                rest.append(f)
        return c, tuple(rest)
    return 1.0, (t,)


def _build_term(c: float, rest: tuple) -> Expr:
    if not rest:
        return Const(c)
    body = rest[0] if len(rest) == 1 else Mul(rest)
    if c == 1.0:
        return body
    if c == -1.0:
        return Neg(body)
    if c < 0:
        return Neg(Mul((Const(-c),) + rest))
    return Mul((Const(c),) + rest)


def simplify(e: Expr) -> Expr:
    """Constant folding, 0/1 identities and like-term collection.

    No distribution and no trigonometric rewriting: ``cos(t)^2 + sin(t)^2``
    is left alone.
    """
    memo: dict = {}

    def go(n):
        if n in memo:
            return memo[n]
        out = _simp(n, go)
        memo[n] = out
        return out

    return go(e)


def _simp(n: Expr, go) -> Expr:
    if isinstance(n, (Const, Var)):
        return n
    if isinstance(n, Neg):
        a = go(n.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        c, rest = _split_coeff(a)
        return _build_term(-c, rest)
    if isinstance(n, Call):
        a = go(n.arg)
        if isinstance(a, Const):
            return Const(math.sin(a.value) if n.fn == "sin" else math.cos(a.value))
        return Call(n.fn, a)
    if isinstance(n, Pow):
        b = go(n.base)
        e = n.exp
        if e == 0:
            return ONE
        if e == 1:
            return b
        if isinstance(b, Const):
            try:
                return Const(_pow_value(b.value, e))
            except EvaluationError:
                return Pow(b, e)
        if isinstance(b, Pow) and e.denominator == 1:
            return go(Pow(b.base, b.exp * e))
        return Pow(b, e)
    if isinstance(n, Mul):
        coeff = 1.0
        powers: dict = {}
        order = []
        stack = [go(a) for a in n.args]
        while stack:
            f = stack.pop(0)
            if isinstance(f, Mul):
                stack[:0] = list(f.args)
                continue
            if isinstance(f, Neg):
                coeff = -coeff
                stack.insert(0, f.arg)
                continue
            if isinstance(f, Const):
                coeff *= f.value
                continue
            base, ex = (f.base, f.exp) if isinstance(f, Pow) else (f, Fraction(1))
            if base not in powers:
                order.append(base)
                powers[base] = Fraction(0)
            powers[base] += ex
        if coeff == 0.0:
            return ZERO
        factors = []
        for base in sorted(order, key=_sort_key):
            ex = powers[base]
            if ex == 0:
                continue
            factors.append(base if ex == 1 else Pow(base, ex))
        return _build_term(coeff, tuple(factors))
    if isinstance(n, Add):
        const = 0.0
        terms: dict = {}
        stack = [go(a) for a in n.args]
        while stack:
            t = stack.pop(0)
            if isinstance(t, Add):
                stack[:0] = list(t.args)
                continue
            c, rest = _split_coeff(t)
            if not rest:
                const += c
                continue
            terms[rest] = terms.get(rest, 0.0) + c
        out = [_build_term(c, rest) for rest, c in terms.items() if c != 0.0]
        if const != 0.0:
            out.append(Const(const))
        if not out:
            return ZERO
        if len(out) == 1:
            return out[0]
        return Add(out)
    raise TypeError(type(n))


# ---------------------------------------------------------------------------
# polynomial normal form over atoms
# ---------------------------------------------------------------------------
#
# A Poly is a map monomial -> float coefficient.  A monomial is a sorted tuple
# of (atom, exponent) pairs.  Atoms are Var, Call(sin|cos, canonical arg), or a
# canonical multi-term base carrying a non-natural exponent.

def _atom_key(atom) -> str:
    return _sort_key(atom)


def _merge_monos(m1: tuple, m2: tuple) -> tuple:
    if not m1:
        return m2
    if not m2:
        return m1
    d = dict(m1)
    for a, k in m2:
        d[a] = d.get(a, 0) + k
    return tuple(sorted(((a, k) for a, k in d.items() if k != 0), key=lambda p: _atom_key(p[0])))


class Poly:
    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = terms if terms is not None else {}

    @staticmethod
    def const(c: float) -> "Poly":
        return Poly({(): float(c)} if c != 0.0 else {})

    @staticmethod
    def atom(a: Expr, k=Fraction(1)) -> "Poly":
        return Poly({((a, Fraction(k)),): 1.0})

    def is_zero(self) -> bool:
        return not self.terms

    def constant_value(self):
        if not self.terms:
            return 0.0
        if len(self.terms) == 1 and () in self.terms:
            return self.terms[()]
        return None

    def __add__(self, other: "Poly") -> "Poly":
        if not other.terms:
            return self
        if not self.terms:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m, 0.0) + c
            if v == 0.0:
                out.pop(m, None)
            else:
                out[m] = v
        return Poly(out)

    def __neg__(self) -> "Poly":
        return Poly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def scale(self, s: float) -> "Poly":
        if s == 0.0:
            return Poly()
        if s == 1.0:
            return self
        return Poly({m: c * s for m, c in self.terms.items()})

    def __mul__(self, other: "Poly") -> "Poly":
        if not self.terms or not other.terms:
            return Poly()
        out: dict = {}
        pending = []
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _merge_monos(m1, m2)
                c = c1 * c2
                if _needs_normalizing(m):
                    pending.append((m, c))
                    continue
                v = out.get(m, 0.0) + c
                if v == 0.0:
                    out.pop(m, None)
                else:
                    out[m] = v
        result = Poly(out)
        for m, c in pending:
            result = result + _normalize_term(m, c)
        return result

    def size(self) -> int:
        n = 0
        for m in self.terms:
            n += 2 + sum(1 + _atom_size(a) for a, _ in m)
        return n

    def free(self) -> frozenset:
        out = set()
        for m in self.terms:
            for a, _ in m:
                out |= free_symbols(a)
        return frozenset(out)

    def diff(self, var: str) -> "Poly":
        out = Poly()
        for m, c in self.terms.items():
            for i, (a, k) in enumerate(m):
                if var not in free_symbols(a):
                    continue
                da = _atom_derivative(a, var)
                if da.is_zero():
                    continue
                rest = m[:i] + m[i + 1:]
                if k != 1:
                    rest = _merge_monos(rest, ((a, k - 1),))
                piece = Poly({rest: c * float(k)}) if not _needs_normalizing(rest) else _normalize_term(rest, c * float(k))
                out = out + piece * da
        return out

    def to_expr(self) -> Expr:
        if not self.terms:
            return ZERO
        items = sorted(self.terms.items(), key=lambda mc: (len(mc[0]) == 0, [(_atom_key(a), k) for a, k in mc[0]]))
        out = []
        for m, c in items:
            factors = tuple(a if k == 1 else Pow(a, k) for a, k in m)
            out.append(_build_term(c, factors))
        return out[0] if len(out) == 1 else Add(out)


def _atom_size(a: Expr) -> int:
    return count_nodes(a)


def _is_sum_atom(a: Expr) -> bool:
    return not isinstance(a, (Var, Call))


def _needs_normalizing(m: tuple) -> bool:
    for a, k in m:
        if _is_sum_atom(a) and k.denominator == 1 and k > 0:
            return True
    return False


def _normalize_term(m: tuple, c: float) -> Poly:
    """Expand sum-atoms that ended up with a positive integer exponent."""
    keep = []
    result = Poly.const(c)
    for a, k in m:
        if _is_sum_atom(a) and k.denominator == 1 and k > 0:
            base = to_poly(a)
            for _ in range(int(k)):
                result = result * base
        else:
            keep.append((a, k))
    return result * Poly({tuple(keep): 1.0})


@lru_cache(maxsize=200_000)
def _atom_derivative(a: Expr, var: str) -> Poly:
    if isinstance(a, Var):
        return Poly.const(1.0) if a.name == var else Poly()
    if isinstance(a, Call):
        du = to_poly(a.arg).diff(var)
        if du.is_zero():
            return Poly()
        if a.fn == "sin":
            return Poly.atom(Call("cos", a.arg)) * du
        return -(Poly.atom(Call("sin", a.arg)) * du)
    # sum atom with exponent 1 in this call: derivative of the base itself
    return to_poly(a).diff(var)


def to_poly(e: Expr) -> Poly:
    try:
        return e._poly
    except AttributeError:
        pass
    p = _to_poly(e)
    object.__setattr__(e, "_poly", p)
    return p


def _to_poly(e: Expr) -> Poly:
    if isinstance(e, Const):
        return Poly.const(e.value)
    if isinstance(e, Var):
        return Poly.atom(e)
    if isinstance(e, Neg):
        return -to_poly(e.arg)
    if isinstance(e, Add):
        out = Poly()
        for a in e.args:
            out = out + to_poly(a)
        return out
    if isinstance(e, Mul):
        out = Poly.const(1.0)
        for a in e.args:
            out = out * to_poly(a)
            if out.is_zero():
                break
        return out
    if isinstance(e, Call):
        pa = to_poly(e.arg)
        c = pa.constant_value()
        if c is not None:
            return Poly.const(math.sin(c) if e.fn == "sin" else math.cos(c))
        return Poly.atom(Call(e.fn, pa.to_expr()))
    if isinstance(e, Pow):
        return _poly_pow(to_poly(e.base), e.exp)
    raise TypeError(type(e))


def _poly_pow(pb: Poly, k: Fraction) -> Poly:
    if k == 0:
        return Poly.const(1.0)
    c = pb.constant_value()
    if c is not None:
        return Poly.const(_pow_value(c, k))
    if k.denominator == 1 and k > 0:
        out = Poly.const(1.0)
        for _ in range(int(k)):
            out = out * pb
        return out
    if len(pb.terms) == 1:
        (m, coef), = pb.terms.items()
        if k.denominator == 1:
            return Poly({tuple((a, e * k) for a, e in m): coef ** int(k)})
        if coef > 0 and len(m) == 1 and m[0][1].numerator % 2 == 1:
            a, e = m[0]
            return Poly({((a, e * k),): coef ** float(k)})
    return Poly.atom(pb.to_expr(), k)


def _trig_reduce(p: Poly) -> Poly:
    out = Poly()
    work = list(p.terms.items())
    while work:
        m, c = work.pop()
        hit = None
        for idx, (a, k) in enumerate(m):
            if isinstance(a, Call) and a.fn == "sin" and k.denominator == 1 and k >= 2:
                hit = idx
                break
        if hit is None:
            out = out + Poly({m: c})
            continue
        a, k = m[hit]
        rest = m[:hit] + m[hit + 1:]
        if k > 2:
            rest = _merge_monos(rest, ((a, k - 2),))
        cos_a = Call("cos", a.arg)
        work.append((rest, c))
        work.append((_merge_monos(rest, ((cos_a, Fraction(2)),)), -c))
    return out


def normalize(e: Expr) -> Expr:
    """Expanded normal form with ``sin(u)^2`` rewritten as ``1 - cos(u)^2``.

    Used internally to tidy frame coefficients; ``simplify`` never does this.
    """
    return _trig_reduce(to_poly(e)).to_expr()


def directional_derivative(e: Expr, field: Mapping[str, Expr]) -> Expr:
    """``sum_v field[v] * de/dv`` in the normal form of :func:`normalize`."""
    p = to_poly(e)
    fs = p.free()
    acc = Poly()
    for var, coef in field.items():
        if var not in fs:
            continue
        d = p.diff(var)
        if not d.is_zero():
            acc = acc + to_poly(coef) * d
    return _trig_reduce(acc).to_expr()


def poly_size(e: Expr) -> int:
    """Node-count estimate of the normal form of ``e``."""
    return to_poly(e).size()


def expand(e: Expr) -> Expr:
    """Distribute products over sums and collect like monomials.

    Bases with negative or fractional exponents that are sums stay as atoms.
    """
    return to_poly(e).to_expr()


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def partial_derivative(e: Expr, var: str) -> Expr:
    """Exact partial derivative, returned in simplified form."""
    memo: dict = {}

    def d(n):
        if n in memo:
            return memo[n]
        if var not in free_symbols(n):
            out = ZERO
        elif isinstance(n, Var):
            out = ONE
        elif isinstance(n, Neg):
            out = _fold_neg(d(n.arg))
        elif isinstance(n, Add):
            out = ZERO
            for a in n.args:
                out = _fold_add(out, d(a))
        elif isinstance(n, Mul):
            out = ZERO
            for i, a in enumerate(n.args):
                da = d(a)
                if _is_const(da, 0.0):
                    continue
                term = da
                for j, b in enumerate(n.args):
                    if j != i:
                        term = _fold_mul(term, b)
                out = _fold_add(out, term)
        elif isinstance(n, Pow):
            db = d(n.base)
            out = _fold_mul(_fold_mul(Const(float(n.exp)), _fold_pow(n.base, n.exp - 1)), db)
        else:
            da = d(n.arg)
            if n.fn == "sin":
                out = _fold_mul(Call("cos", n.arg), da)
            else:
                out = _fold_neg(_fold_mul(Call("sin", n.arg), da))
        memo[n] = out
        return out

    return simplify(d(e))


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------

def _hpow_math(b, e):
    if b < 0.0:
        raise DomainError(f"sqrt of negative value {b!r}")
    if b == 0.0 and e < 0:
        raise DivisionByZeroError("division by zero")
    return math.sqrt(b) ** int(2 * e)


def _hpow_numpy(b, e):
    b = np.asarray(b, dtype=float)
    if np.any(b < 0.0):
        raise DomainError("sqrt of negative value")
    if e < 0 and np.any(b == 0.0):
        raise DivisionByZeroError("division by zero")
    return np.sqrt(b) ** int(2 * e)


def _sum(xs):
    it = iter(xs)
    acc = next(it)
    for x in it:
        acc = acc + x
    return acc


def _prod(xs):
    it = iter(xs)
    acc = next(it)
    for x in it:
        acc = acc * x
    return acc


def _namespace(backend: str) -> dict:
    if backend == "math":
        return {"_sin": math.sin, "_cos": math.cos, "_hpow": _hpow_math, "_sum": math.fsum, "_prod": _prod}
    if backend == "numpy":
        return {"_sin": np.sin, "_cos": np.cos, "_hpow": _hpow_numpy, "_sum": _sum, "_prod": _prod}
    if backend == "jet":
        from . import jets

        return {"_sin": jets.jet_sin, "_cos": jets.jet_cos, "_hpow": jets.jet_hpow, "_sum": _sum, "_prod": _prod}
    raise ValueError(f"unknown backend {backend!r}")


def _codegen(exprs: Sequence[Expr], args: Sequence[str], consts: Mapping[str, float]):
    names = {a: f"a{i}" for i, a in enumerate(args)}
    lines = []
    memo: dict = {}
    counter = [0]

    def emit(code: str) -> str:
        name = f"t{counter[0]}"
        counter[0] += 1
        lines.append(f"    {name} = {code}")
        return name

    def go(n) -> str:
        if n in memo:
            return memo[n]
        if isinstance(n, Const):
            out = repr(n.value) if n.value >= 0 else f"({n.value!r})"
        elif isinstance(n, Var):
            if n.name in names:
                out = names[n.name]
            elif n.name in consts:
                v = float(consts[n.name])
                out = repr(v) if v >= 0 else f"({v!r})"
            else:
                raise UnboundVariableError(f"unbound variable {n.name!r}")
        elif isinstance(n, Neg):
            out = emit(f"-{go(n.arg)}")
        elif isinstance(n, Add):
            parts = [go(a) for a in n.args]
            out = emit(f"_sum(({', '.join(parts)},))")
        elif isinstance(n, Mul):
            parts = [go(a) for a in n.args]
            out = emit(f"_prod(({', '.join(parts)},))") if len(parts) > 2 else emit(" * ".join(parts))
        elif isinstance(n, Pow):
            b = go(n.base)
            if n.exp.denominator == 1:
                out = emit(f"{b} ** {int(n.exp)}")
            else:
                out = emit(f"_hpow({b}, {float(n.exp)!r})")
        else:
            out = emit(f"_{n.fn}({go(n.arg)})")
        memo[n] = out
        return out

    results = [go(e) for e in exprs]
    return names, lines, results


def compile_function(
    exprs: Sequence[Expr] | Expr,
    args: Sequence[str],
    consts: Mapping[str, float] | None = None,
    backend: str = "math",
) -> Callable:
    """Compile expressions into ``f(*args) -> tuple`` (or a scalar for one Expr).

    Variables listed in ``consts`` are inlined as numbers.  The ``numpy``
    backend accepts arrays; the ``jet`` backend accepts truncated Taylor series.
    """
    single = isinstance(exprs, Expr)
    exprs = [exprs] if single else list(exprs)
    names, lines, results = _codegen(exprs, args, consts or {})
    header = f"def _f({', '.join(names[a] for a in args)}):"
    if single:
        ret = f"    return {results[0]}"
    else:
        ret = f"    return ({', '.join(results)}{',' if len(results) == 1 else ''})"
    src = "\n".join([header, *lines, ret])
    ns = _namespace(backend)
    exec(compile(src, "<nonholo-expr>", "exec"), ns)
    raw = ns["_f"]

    if backend == "numpy":
        def f(*xs):
            try:
                with np.errstate(divide="raise", invalid="raise", over="raise"):
                    return raw(*xs)
            except FloatingPointError as exc:
                if "divide" in str(exc):
                    raise DivisionByZeroError(str(exc)) from None
                raise EvaluationError(str(exc)) from None
    else:
        def f(*xs):
            try:
                return raw(*xs)
            except ZeroDivisionError as exc:
                if isinstance(exc, DivisionByZeroError):
                    raise
                raise DivisionByZeroError("division by zero") from None
            except OverflowError as exc:
                raise EvaluationError(f"overflow: {exc}") from None

    f.source = src
    f.args = tuple(args)
    return f


# ---------------------------------------------------------------------------
# sampled zero testing
# ---------------------------------------------------------------------------

def sample_box(box: Mapping[str, tuple], n: int, seed: int = DEFAULT_SEED,
               fixed: Mapping[str, float] | None = None) -> dict:
    """Uniform samples: returns name -> array of length n."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in sorted(box):
        lo, hi = box[name]
        out[name] = rng.uniform(lo, hi, size=n)
    for name, v in (fixed or {}).items():
        out[name] = np.full(n, float(v))
    return out


def probably_zero(
    e: Expr,
    box: Mapping[str, tuple],
    trials: int = 64,
    tol: float = 1e-10,
    seed: int = DEFAULT_SEED,
    fixed: Mapping[str, float] | None = None,
) -> bool:
    """True iff ``|e| <= tol`` at ``trials`` uniform samples of ``box``.

    Variables in ``fixed`` are held at the given values.  Evaluation errors
    at a sample propagate.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if isinstance(e, Const):
        return abs(e.value) <= tol
    samples = sample_box(box, trials, seed, fixed)
    names = sorted(free_symbols(e))
    missing = [v for v in names if v not in samples]
    if missing:
        raise UnboundVariableError(f"no sampling range for {missing}")
    f = compile_function(e, names, backend="numpy")
    vals = np.broadcast_to(np.asarray(f(*(samples[v] for v in names)), dtype=float), (trials,))
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("non-finite value at a sample")
    return bool(np.all(np.abs(vals) <= tol))
