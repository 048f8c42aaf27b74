"""Truncated Taylor series ("jets") in one variable.

Used as a numeric backend for compiled expressions: running a vector field
through jets by Picard iteration gives the Taylor expansion of a flow, whose
coefficients are iterated Lie derivatives up to factorials.
"""
from __future__ import annotations

import math

import numpy as np

from .expr import DivisionByZeroError, DomainError


class Jet:
    """Coefficients ``c[0] + c[1] t + ... + c[n] t^n`` (mod ``t^(n+1)``)."""

    __slots__ = ("c",)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    @property
    def order(self) -> int:
        return len(self.c) - 1

    @classmethod
    def constant(cls, value: float, order: int) -> "Jet":
        c = np.zeros(order + 1)
        c[0] = value
        return cls(c)

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(float(other), self.order)

    def __add__(self, other):
        return Jet(self.c + self._lift(other).c)

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.c - self._lift(other).c)

    def __rsub__(self, other):
        return Jet(self._lift(other).c - self.c)

    def __neg__(self):
        return Jet(-self.c)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * float(other))
        n = len(self.c)
        return Jet(np.convolve(self.c, other.c)[:n])

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        a = self.c
        if a[0] == 0.0:
            raise DivisionByZeroError("division by zero")
        out = np.zeros_like(a)
        out[0] = 1.0 / a[0]
        for k in range(1, len(a)):
            out[k] = -np.dot(a[1:k + 1], out[k - 1::-1][:k]) / a[0]
        return Jet(out)

    def __truediv__(self, other):
        return self * self._lift(other).reciprocal()

    def __rtruediv__(self, other):
        return self._lift(other) * self.reciprocal()

    def __pow__(self, e):
        e = float(e)
        if e.is_integer() and e >= 0:
            out = Jet.constant(1.0, self.order)
            base = self
            k = int(e)
            while k:
                if k & 1:
                    out = out * base
                base = base * base
                k >>= 1
            return out
        return jet_real_pow(self, e)

    def __repr__(self):
        return f"Jet({self.c.tolist()})"


def jet_real_pow(x: Jet, e: float) -> Jet:
    """``x^e`` via the recurrence from ``x y' = e x' y``."""
    a = x.c
    if a[0] == 0.0:
        if e < 0:
            raise DivisionByZeroError("division by zero")
        raise DomainError("non-integer power of a series with zero constant term")
    if a[0] < 0.0 and not float(e).is_integer():
        raise DomainError(f"sqrt of negative value {a[0]!r}")
    n = len(a)
    y = np.zeros(n)
    y[0] = a[0] ** e
    for k in range(1, n):
        j = np.arange(1, k + 1)
        y[k] = np.sum((e * j - (k - j)) * a[j] * y[k - j]) / (k * a[0])
    return Jet(y)


def _sincos(x: Jet):
    a = x.c
    n = len(a)
    s = np.zeros(n)
    c = np.zeros(n)
    s[0] = math.sin(a[0])
    c[0] = math.cos(a[0])
    for k in range(1, n):
        j = np.arange(1, k + 1)
        s[k] = np.sum(j * a[j] * c[k - j]) / k
        c[k] = -np.sum(j * a[j] * s[k - j]) / k
    return Jet(s), Jet(c)


def jet_sin(x):
    if not isinstance(x, Jet):
        return math.sin(x)
    return _sincos(x)[0]


def jet_cos(x):
    if not isinstance(x, Jet):
        return math.cos(x)
    return _sincos(x)[1]


def jet_hpow(b, e):
    if not isinstance(b, Jet):
        if b < 0.0:
            raise DomainError(f"sqrt of negative value {b!r}")
        if b == 0.0 and e < 0:
            raise DivisionByZeroError("division by zero")
        return b ** e
    return jet_real_pow(b, e)


def integrate_series(x: Jet) -> Jet:
    """Antiderivative with zero constant term, truncated to the same order."""
    n = len(x.c)
    out = np.zeros(n)
    out[1:] = x.c[:-1] / np.arange(1, n)
    return Jet(out)


def flow_series(rhs, state0, order: int):
    """Taylor coefficients of the solution of ``y' = rhs(*y)`` through ``state0``.

    ``rhs`` must accept and return jets (a compiled jet-backend function).
    Returns an array of shape ``(len(state0), order + 1)``.
    """
    y0 = [float(s) for s in state0]
    ys = [Jet.constant(v, order) for v in y0]
    for _ in range(order):
        dy = rhs(*ys)
        ys = [Jet.constant(v, order) + integrate_series(_as_jet(d, order)) for v, d in zip(y0, dy)]
    return np.array([y.c for y in ys])


def _as_jet(v, order):
    return v if isinstance(v, Jet) else Jet.constant(float(v), order)
