"""State vectors, candidate actions and model bypass rules for the RL agents.

The same kernels back these functions during training and at build time, so
a state constructed here is exactly what the network sees inside the tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .geometry import Rect
from .heuristics import _arrays, _check_overflow, _ids, _obj


@dataclass(frozen=True)
class CandidateChild:
    entry_index: int
    delta_area: float
    delta_margin: float
    delta_overlap: float
    occupancy: float


@dataclass(frozen=True)
class CandidateSplit:
    axis: int
    position: int
    group1_mbr: Rect
    group2_mbr: Rect
    area1: float
    area2: float
    margin1: float
    margin2: float
    overlap: float

    @property
    def total_area(self) -> float:
        return self.area1 + self.area2

    @property
    def total_margin(self) -> float:
        return self.margin1 + self.margin2


@dataclass(frozen=True)
class StateVector:
    """A 4k feature vector; only the first ``valid_actions`` blocks are meaningful."""

    values: np.ndarray
    valid_actions: int

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] % 4:
            raise ValueError(f"state length must be a multiple of 4, got {v.shape}")
        if not 1 <= self.valid_actions <= v.shape[0] // 4:
            raise ValueError(f"valid_actions {self.valid_actions} out of range for k={v.shape[0] // 4}")
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0] // 4


def rank_candidate_children(
    entries: Sequence[Rect], child_counts: Sequence[int], obj: Rect, k: int, M: int
) -> list[CandidateChild]:
    """Top-k children by area increase (ties: margin increase, then index)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    lo, hi = _arrays(entries)
    olo, ohi = _obj(obj, lo.shape[1])
    n = len(entries)
    counts = np.asarray(child_counts, dtype=np.int64)
    if counts.shape != (n,):
        raise ValueError("one child count per entry required")
    cand = np.empty(k, np.int64)
    raw = np.empty((k, 4))
    nv = K.cs_candidates(lo, hi, n, counts, olo, ohi, k, M, cand, raw)
    return [CandidateChild(int(cand[j]), *map(float, raw[j])) for j in range(nv)]


def choose_state(candidates: Sequence[CandidateChild], k: int) -> StateVector:
    if not 1 <= len(candidates) <= k:
        raise ValueError(f"need 1..{k} candidates, got {len(candidates)}")
    raw = np.array([[c.delta_area, c.delta_margin, c.delta_overlap, c.occupancy] for c in candidates])
    state = np.empty(4 * k)
    K.cs_state(raw, len(candidates), k, state)
    return StateVector(state, len(candidates))


def containment_shortcut(entries: Sequence[Rect], obj: Rect) -> int | None:
    """Smallest-area entry fully containing ``obj``, or None."""
    lo, hi = _arrays(entries)
    olo, ohi = _obj(obj, lo.shape[1])
    c = K.containment_child(lo, hi, len(entries), olo, ohi)
    return None if c < 0 else int(c)


@dataclass(frozen=True)
class SplitCandidates:
    """Candidate splits of one overflowing node.

    ``all`` holds every candidate and ``zero_overlap`` the non-overlapping
    ones, both ordered by (total area, total margin, axis, position).
    ``groups(c)`` recovers the entry positions of a candidate.
    """

    all: list[CandidateSplit]
    zero_overlap: list[CandidateSplit]
    orders: np.ndarray

    def groups(self, c: CandidateSplit) -> tuple[tuple[int, ...], tuple[int, ...]]:
        first = self.orders[c.axis, : c.position]
        rest = self.orders[c.axis, c.position :]
        return tuple(sorted(first.tolist())), tuple(sorted(rest.tolist()))


def enumerate_candidate_splits(entries: Sequence[Rect], m: int, M: int, ids=None) -> SplitCandidates:
    _check_overflow(len(entries), m, M)
    lo, hi = _arrays(entries)
    n, d = lo.shape
    per_axis = n - 2 * m + 1
    orders = np.empty((d, n), np.int64)
    cax = np.empty(d * per_axis, np.int64)
    cpos = np.empty(d * per_axis, np.int64)
    feats = np.empty((d * per_axis, 5))
    t = K.enumerate_splits(lo, hi, _ids(ids, n), n, m, orders, cax, cpos, feats)
    ordered = np.empty(t, np.int64)
    K.sort_candidates(feats, t, ordered)
    out = []
    for c in ordered:
        axis, pos = int(cax[c]), int(cpos[c])
        g1, g2 = orders[axis, :pos], orders[axis, pos:]
        out.append(
            CandidateSplit(
                axis,
                pos,
                Rect(tuple(lo[g1].min(axis=0)), tuple(hi[g1].max(axis=0))),
                Rect(tuple(lo[g2].min(axis=0)), tuple(hi[g2].max(axis=0))),
                *map(float, feats[c]),
            )
        )
    return SplitCandidates(out, [c for c in out if c.overlap == 0.0], orders)


def split_state(topk: Sequence[CandidateSplit], k: int) -> StateVector:
    if not 1 <= len(topk) <= k:
        raise ValueError(f"need 1..{k} candidate splits, got {len(topk)}")
    feats = np.array([[c.area1, c.area2, c.margin1, c.margin2, c.overlap] for c in topk])
    state = np.empty(4 * k)
    K.split_state(feats, np.arange(len(topk), dtype=np.int64), len(topk), k, state)
    return StateVector(state, len(topk))


def split_special_case(candidates: SplitCandidates) -> CandidateSplit | None:
    """Forced minimum-overlap split when at most one candidate avoids overlap."""
    if len(candidates.zero_overlap) > 1:
        return None
    best = None
    for c in candidates.all:
        key = (c.overlap, c.total_area, c.axis, c.position)
        if best is None or key < best[0]:
            best = (key, c)
    return best[1]
