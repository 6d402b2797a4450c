"""Forward-mode dual numbers carrying a vector of partial derivatives.

A :class:`Dual` holds a value (scalar or array of batch samples) and the
partials of that value with respect to a fixed set of seed variables.  The
partials array has shape ``(m,) + shape(value)`` so that a single pass over an
expression tree produces a full gradient, optionally for a whole batch of
evaluation points at once.

Plain Python/NumPy numbers mixed into the arithmetic are treated as
constants.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Dual", "seed", "sin", "cos", "tanh", "exp", "value_of", "partials_of"]


class Dual:
    __slots__ = ("value", "partials")

    # keep numpy from broadcasting over Dual operands; it defers to our reflected ops
    __array_ufunc__ = None

    def __init__(self, value, partials):
        self.value = value
        self.partials = partials

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.partials!r})"

    def __neg__(self) -> Dual:
        return Dual(-self.value, -self.partials)

    def __pos__(self) -> Dual:
        return self

    def __add__(self, other) -> Dual:
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.partials + other.partials)
        return Dual(self.value + other, self.partials)

    __radd__ = __add__

    def __sub__(self, other) -> Dual:
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.partials - other.partials)
        return Dual(self.value - other, self.partials)

    def __rsub__(self, other) -> Dual:
        return Dual(other - self.value, -self.partials)

    def __mul__(self, other) -> Dual:
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                self.partials * other.value + self.value * other.partials,
            )
        return Dual(self.value * other, self.partials * other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Dual:
        if isinstance(other, Dual):
            q = self.value / other.value
            return Dual(q, (self.partials - q * other.partials) / other.value)
        return Dual(self.value / other, self.partials / other)

    def __rtruediv__(self, other) -> Dual:
        q = other / self.value
        return Dual(q, -q * self.partials / self.value)

    def __pow__(self, p: int) -> Dual:
        if not isinstance(p, (int, np.integer)) or p < 0:
            raise TypeError("Dual supports only non-negative integer powers")
        if p == 0:
            return Dual(np.ones_like(self.value) if np.ndim(self.value) else 1.0,
                        np.zeros_like(self.partials))
        if p == 1:
            return self
        return Dual(self.value**p, (p * self.value ** (p - 1)) * self.partials)


def seed(values, m: int) -> list[Dual]:
    """Return one dual per entry of ``values`` with unit partials.

    ``values`` is a sequence of arrays sharing one batch shape; the i-th dual
    gets partial 1 with respect to seed direction i out of ``m``.
    """
    out = []
    for i, v in enumerate(values):
        v = np.asarray(v, dtype=float)
        d = np.zeros((m,) + v.shape)
        d[i] = 1.0
        out.append(Dual(v, d))
    return out


def _unary(u, f_np, f_math, df):
    if isinstance(u, Dual):
        return Dual(f_np(u.value), df(u.value) * u.partials)
    if isinstance(u, np.ndarray):
        return f_np(u)
    return f_math(u)


def sin(u):
    return _unary(u, np.sin, math.sin, np.cos)


def cos(u):
    return _unary(u, np.cos, math.cos, lambda v: -np.sin(v))


def tanh(u):
    return _unary(u, np.tanh, math.tanh, lambda v: 1.0 - np.tanh(v) ** 2)


def exp(u):
    return _unary(u, np.exp, math.exp, np.exp)


def value_of(u):
    return u.value if isinstance(u, Dual) else u


def partials_of(u, m: int, shape: tuple = ()):
    if isinstance(u, Dual):
        return np.broadcast_to(u.partials, (m,) + shape)
    return np.zeros((m,) + shape)
