"""Closed real intervals used to carry measurement uncertainty.

Endpoints are plain floats with no outward rounding; the widths involved
(three standard deviations of a measurement) dwarf rounding error.

Subtraction uses the standard rule ``[a, b] - [c, d] = [a - d, b - c]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

__all__ = [
    "Interval",
    "IntervalError",
    "add",
    "sub",
    "mul",
    "div",
    "from_gaussian",
    "midpoint",
    "contains",
    "interval_sum",
]


class IntervalError(ValueError):
    """Invalid interval or undefined interval operation."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise IntervalError(f"non-finite interval [{lo}, {hi}]")
        if lo > hi:
            raise IntervalError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, value: float) -> "Interval":
        return cls(value, value)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return midpoint(self)

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def __contains__(self, value: float) -> bool:
        return contains(self, value)

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "Interval":
        return cls(d["lo"], d["hi"])


def _coerce(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.point(x)


def add(a: Interval, b: Interval) -> Interval:
    return Interval(a.lo + b.lo, a.hi + b.hi)


def sub(a: Interval, b: Interval) -> Interval:
    return Interval(a.lo - b.hi, a.hi - b.lo)


def mul(a: Interval, b: Interval) -> Interval:
    p = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
    return Interval(min(p), max(p))


def div(a: Interval, b: Interval) -> Interval:
    if b.lo <= 0.0 <= b.hi:
        raise IntervalError(f"division by interval containing zero: [{b.lo}, {b.hi}]")
    # endpoint quotients, so rounding stays monotone like the other operators
    q = (a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi)
    return Interval(min(q), max(q))


def from_gaussian(mean: float, sigma: float) -> Interval:
    """Interval covering ``mean +/- 3 sigma`` (99.7% of a normal distribution)."""
    if sigma < 0:
        raise IntervalError(f"negative standard deviation {sigma}")
    return Interval(mean - 3.0 * sigma, mean + 3.0 * sigma)


def midpoint(a: Interval) -> float:
    return 0.5 * (a.lo + a.hi)


def contains(a: Interval, v: float) -> bool:
    return a.lo <= v <= a.hi


def interval_sum(items: Iterable[Interval]) -> Interval:
    total = Interval(0.0, 0.0)
    for it in items:
        total = add(total, it)
    return total
