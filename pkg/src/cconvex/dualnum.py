"""Nested (multi-epsilon) dual numbers for exact mixed partial derivatives.

A level-L dual number lives in R[e1,...,eL]/(ei^2 = 0).  Coefficients are
stored in a flat array indexed by the bitmask of epsilon factors, so the
coefficient at mask (1<<i | 1<<j) is the exact mixed partial with respect to
the directions seeded on e_i and e_j.  Level 4 is enough for the fourth-order
cross derivatives the cost jets need.

Arithmetic is exact up to floating point roundoff: no truncation error, which
is what makes this path the reference engine for derivative cross-checks.
"""

from __future__ import annotations

import math

import numpy as np

_MUL_TABLE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _mul_table(level: int):
    """Index triples (out, a, b) with a | b = out and a & b = 0."""
    tab = _MUL_TABLE.get(level)
    if tab is None:
        outs, lefts, rights = [], [], []
        for s in range(1 << level):
            t = s
            while True:
                outs.append(s)
                lefts.append(t)
                rights.append(s ^ t)
                if t == 0:
                    break
                t = (t - 1) & s
        tab = (np.array(outs), np.array(lefts), np.array(rights))
        _MUL_TABLE[level] = tab
    return tab


class Dual:
    """Truncated polynomial in nilpotent generators e1..eL."""

    __slots__ = ("level", "co")

    def __init__(self, level: int, co=None):
        self.level = level
        if co is None:
            self.co = np.zeros(1 << level)
        else:
            self.co = np.asarray(co, dtype=float)

    @staticmethod
    def constant(value: float, level: int) -> "Dual":
        d = Dual(level)
        d.co[0] = value
        return d

    @staticmethod
    def seeded(value: float, masks, level: int) -> "Dual":
        """Constant plus unit epsilons for each bit position in masks."""
        d = Dual.constant(value, level)
        for m in masks:
            d.co[1 << m] += 1.0
        return d

    @property
    def value(self) -> float:
        return float(self.co[0])

    def coefficient(self, mask: int) -> float:
        return float(self.co[mask])

    def _lift(self, other):
        if isinstance(other, Dual):
            if other.level != self.level:
                raise ValueError("mixed dual levels")
            return other
        return Dual.constant(float(other), self.level)

    def __add__(self, other):
        other = self._lift(other)
        return Dual(self.level, self.co + other.co)

    __radd__ = __add__

    def __neg__(self):
        return Dual(self.level, -self.co)

    def __sub__(self, other):
        other = self._lift(other)
        return Dual(self.level, self.co - other.co)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.level, self.co * float(other))
        if other.level != self.level:
            raise ValueError("mixed dual levels")
        out_i, a_i, b_i = _mul_table(self.level)
        out = np.zeros_like(self.co)
        np.add.at(out, out_i, self.co[a_i] * other.co[b_i])
        return Dual(self.level, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.level, self.co / float(other))
        return self * other._reciprocal()

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _nilpotent(self):
        n = Dual(self.level, self.co.copy())
        n.co[0] = 0.0
        return n

    def compose(self, derivs) -> "Dual":
        """Apply a scalar function given its derivatives [f, f', f'', ...] at value."""
        n = self._nilpotent()
        out = Dual.constant(derivs[0], self.level)
        power = Dual.constant(1.0, self.level)
        fact = 1.0
        for m in range(1, min(len(derivs), self.level + 1)):
            power = power * n
            fact *= m
            if not np.any(power.co):
                break
            out = out + power * (derivs[m] / fact)
        return out

    def _reciprocal(self):
        v = self.value
        if v == 0.0:
            raise ZeroDivisionError("dual reciprocal at zero value")
        derivs = [1.0 / v]
        for m in range(1, self.level + 1):
            derivs.append(derivs[-1] * (-m) / v)
        # derivs[m] = (-1)^m m! v^{-m-1}
        return self.compose(derivs)

    def __pow__(self, expo):
        if isinstance(expo, Dual):
            return (expo * self.log()).exp()
        if float(expo) == int(expo) and abs(int(expo)) <= 8:
            k = int(expo)
            if k == 0:
                return Dual.constant(1.0, self.level)
            base = self if k > 0 else self._reciprocal()
            out = base
            for _ in range(abs(k) - 1):
                out = out * base
            return out
        v = self.value
        if v <= 0.0:
            raise ValueError("fractional power of non-positive dual value")
        r = float(expo)
        derivs, c = [], 1.0
        for m in range(self.level + 1):
            derivs.append(c * v ** (r - m))
            c *= (r - m)
        return self.compose(derivs)

    def exp(self):
        e = math.exp(self.value)
        return self.compose([e] * (self.level + 1))

    def log(self):
        v = self.value
        if v <= 0.0:
            raise ValueError("log of non-positive dual value")
        derivs = [math.log(v)]
        c = 1.0
        for m in range(1, self.level + 1):
            derivs.append(c * v ** (-m))
            c *= -m
        return self.compose(derivs)

    def sqrt(self):
        return self ** 0.5

    def __repr__(self):
        return f"Dual(level={self.level}, co={self.co!r})"


def dexp(x):
    return x.exp() if isinstance(x, Dual) else math.exp(x)


def dlog(x):
    return x.log() if isinstance(x, Dual) else math.log(x)


def dsqrt(x):
    return x.sqrt() if isinstance(x, Dual) else math.sqrt(x)
