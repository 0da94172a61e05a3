"""Classic ChooseSubtree and Split heuristics over plain rectangle lists.

These are the functions the tree kernels execute, exposed with a Rect-based
interface for direct use and testing. Split functions return the two groups
as sorted tuples of entry positions. Every tie cascades to the lowest index.

The R*-Tree variant here has no forced reinsertion: overflow always splits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .geometry import DimensionMismatch, Rect
from .policy import Policy

Groups = tuple[tuple[int, ...], tuple[int, ...]]


def _arrays(entries: Sequence[Rect]) -> tuple[np.ndarray, np.ndarray]:
    if not entries:
        raise ValueError("no entries")
    dims = entries[0].dims
    if any(e.dims != dims for e in entries):
        raise DimensionMismatch("entries of mixed dimensionality")
    lo = np.array([e.lo for e in entries], dtype=np.float64)
    hi = np.array([e.hi for e in entries], dtype=np.float64)
    return lo, hi


def _obj(obj: Rect, dims: int) -> tuple[np.ndarray, np.ndarray]:
    if obj.dims != dims:
        raise DimensionMismatch(f"{obj.dims}-d object against {dims}-d entries")
    return obj.as_arrays()


def _ids(ids, n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)


def _groups(mask: np.ndarray) -> Groups:
    idx = np.arange(len(mask))
    return tuple(idx[mask].tolist()), tuple(idx[~mask].tolist())


def _check_overflow(n: int, m: int, M: int) -> None:
    if n != M + 1:
        raise ValueError(f"split expects M+1 = {M + 1} entries, got {n}")
    if not 1 <= m <= M // 2:
        raise ValueError(f"need 1 <= m <= M/2, got m={m}, M={M}")


def choose_min_area_enlargement(entries: Sequence[Rect], obj: Rect) -> int:
    """Entry whose area grows least; ties go to the smaller result, then lower index."""
    lo, hi = _arrays(entries)
    olo, ohi = _obj(obj, lo.shape[1])
    return int(K.choose_min_area(lo, hi, len(entries), olo, ohi))


def choose_rstar(entries: Sequence[Rect], obj: Rect, children_are_leaves: bool) -> int:
    """R*-Tree ChooseSubtree.

    Directly above the leaves the entry with the least overlap enlargement
    wins (ties: area enlargement, then area); higher up this is the
    minimum-area-enlargement rule.
    """
    lo, hi = _arrays(entries)
    olo, ohi = _obj(obj, lo.shape[1])
    return int(K.choose_rstar(lo, hi, len(entries), olo, ohi, children_are_leaves))


def overlap_enlargement(entries: Sequence[Rect], i: int, obj: Rect) -> float:
    lo, hi = _arrays(entries)
    olo, ohi = _obj(obj, lo.shape[1])
    return float(K.overlap_enlargement(lo, hi, len(entries), i, olo, ohi))


def split_linear(entries: Sequence[Rect], m: int, M: int) -> Groups:
    lo, hi = _arrays(entries)
    _check_overflow(len(entries), m, M)
    mask = np.empty(len(entries), np.bool_)
    K.split_linear(lo, hi, len(entries), m, mask)
    return _groups(mask)


def split_quadratic(entries: Sequence[Rect], m: int, M: int) -> Groups:
    lo, hi = _arrays(entries)
    _check_overflow(len(entries), m, M)
    mask = np.empty(len(entries), np.bool_)
    K.split_quadratic(lo, hi, len(entries), m, mask)
    return _groups(mask)


def split_greene(entries: Sequence[Rect], m: int, M: int, ids=None) -> Groups:
    """Greene's split: pick the axis from the quadratic seeds, then halve the sorted order."""
    lo, hi = _arrays(entries)
    _check_overflow(len(entries), m, M)
    mask = np.empty(len(entries), np.bool_)
    K.split_greene(lo, hi, _ids(ids, len(entries)), len(entries), mask)
    return _groups(mask)


def greene_axis(entries: Sequence[Rect]) -> int:
    lo, hi = _arrays(entries)
    return int(K.greene_axis(lo, hi, len(entries)))


def _enumerated(entries, m, ids):
    lo, hi = _arrays(entries)
    n, d = lo.shape
    per_axis = n - 2 * m + 1
    orders = np.empty((d, n), np.int64)
    cax = np.empty(d * per_axis, np.int64)
    cpos = np.empty(d * per_axis, np.int64)
    feats = np.empty((d * per_axis, 5))
    t = K.enumerate_splits(lo, hi, _ids(ids, n), n, m, orders, cax, cpos, feats)
    return orders, cax, cpos, feats, t


def _candidate_groups(orders, axis, pos, n) -> Groups:
    mask = np.empty(n, np.bool_)
    K.candidate_mask(orders, axis, pos, n, mask)
    return _groups(mask)


def split_rstar_topology(entries: Sequence[Rect], m: int, M: int, ids=None) -> Groups:
    """R* split: axis with the least margin sum, then least overlap, then least total area."""
    _check_overflow(len(entries), m, M)
    orders, cax, cpos, feats, t = _enumerated(entries, m, ids)
    c = K.rstar_choice(feats, cax, t, orders.shape[0])
    return _candidate_groups(orders, cax[c], cpos[c], len(entries))


def split_min_overlap_partition(entries: Sequence[Rect], m: int, M: int, ids=None) -> Groups:
    """Least-overlap candidate over all axes and positions; ties by total area."""
    _check_overflow(len(entries), m, M)
    orders, cax, cpos, feats, t = _enumerated(entries, m, ids)
    c = K.min_overlap_choice(feats, t)
    return _candidate_groups(orders, cax[c], cpos[c], len(entries))


SPLITS = {
    "linear": split_linear,
    "quadratic": split_quadratic,
    "greene": split_greene,
    "rstar-topology": split_rstar_topology,
    "min-overlap-partition": split_min_overlap_partition,
}


CHOOSE_HEURISTICS = ("min-area-enlargement", "rstar-overlap")


@dataclass(frozen=True)
class HeuristicId:
    """A deterministic (ChooseSubtree, Split) pairing."""

    choose_rule: str
    split_rule: str

    def __post_init__(self):
        if self.choose_rule not in CHOOSE_HEURISTICS:
            raise ValueError(f"unknown ChooseSubtree heuristic {self.choose_rule!r}")
        if self.split_rule not in SPLITS:
            raise ValueError(f"unknown Split heuristic {self.split_rule!r}")

    def policy(self) -> Policy:
        return Policy(self.choose_rule, self.split_rule)
