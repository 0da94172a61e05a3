"""Axis-aligned boxes and the arithmetic the index is built on."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    """A d-dimensional closed box ``[lo, hi]``; a point has ``lo == hi``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise DimensionMismatch(f"lo has {len(lo)} coordinates, hi has {len(hi)}")
        if len(lo) < 1:
            raise ValueError("a Rect needs at least one dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"lo must not exceed hi: {lo} vs {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, coords: Sequence[float]) -> Rect:
        return cls(tuple(coords), tuple(coords))

    @classmethod
    def from_center(cls, center: Sequence[float], sides: Sequence[float]) -> Rect:
        lo = tuple(c - s / 2.0 for c, s in zip(center, sides))
        hi = tuple(c + s / 2.0 for c, s in zip(center, sides))
        return cls(lo, hi)

    @property
    def dims(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> tuple[float, ...]:
        return tuple((a + b) / 2.0 for a, b in zip(self.lo, self.hi))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo, dtype=np.float64), np.array(self.hi, dtype=np.float64)


def _check_dims(a: Rect, b: Rect) -> None:
    if a.dims != b.dims:
        raise DimensionMismatch(f"cannot combine {a.dims}-d and {b.dims}-d boxes")


def rect_area(r: Rect) -> float:
    return math.prod(h - l for l, h in zip(r.lo, r.hi))


def rect_margin(r: Rect) -> float:
    """Sum of side lengths (half the perimeter in 2-d)."""
    return sum(h - l for l, h in zip(r.lo, r.hi))


def rect_union(a: Rect, b: Rect) -> Rect:
    _check_dims(a, b)
    return Rect(tuple(map(min, a.lo, b.lo)), tuple(map(max, a.hi, b.hi)))


def rect_overlap_area(a: Rect, b: Rect) -> float:
    _check_dims(a, b)
    result = 1.0
    for al, ah, bl, bh in zip(a.lo, a.hi, b.lo, b.hi):
        w = min(ah, bh) - max(al, bl)
        if w <= 0.0:
            return 0.0
        result *= w
    return result


def rect_intersects(a: Rect, b: Rect) -> bool:
    """Closed-box test: boxes sharing only a boundary intersect."""
    _check_dims(a, b)
    return all(al <= bh and bl <= ah for al, ah, bl, bh in zip(a.lo, a.hi, b.lo, b.hi))


def rect_contains(outer: Rect, inner: Rect) -> bool:
    _check_dims(outer, inner)
    return all(ol <= il and ih <= oh for ol, oh, il, ih in zip(outer.lo, outer.hi, inner.lo, inner.hi))


def mindist(r: Rect, q: Sequence[float]) -> float:
    """Euclidean distance from point ``q`` to the nearest point of ``r``."""
    if len(q) != r.dims:
        raise DimensionMismatch(f"{len(q)}-d point against {r.dims}-d box")
    s = 0.0
    for l, h, x in zip(r.lo, r.hi, q):
        if x < l:
            s += (l - x) ** 2
        elif x > h:
            s += (x - h) ** 2
    return math.sqrt(s)
