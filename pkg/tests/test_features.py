import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rects_from
from rlrtree import _kernels as K
from rlrtree.dqn import QNetwork
from rlrtree.features import (
    CandidateChild,
    CandidateSplit,
    StateVector,
    choose_state,
    containment_shortcut,
    enumerate_candidate_splits,
    rank_candidate_children,
    split_special_case,
    split_state,
)
from rlrtree.geometry import Rect, rect_area, rect_margin, rect_overlap_area, rect_union

COLLINEAR = [Rect((float(i), 0.0), (i + 1.0, 1.0)) for i in range(5)]
A, B = Rect((0, 0), (1, 1)), Rect((2, 2), (3, 3))


def child_oracle(entries, counts, obj, M):
    """Raw features of every child plus the full ascending (ΔArea, ΔMargin, index) order."""
    rows = []
    for i, e in enumerate(entries):
        g = rect_union(e, obj)
        d_ovl = sum(rect_overlap_area(g, o) - rect_overlap_area(e, o) for j, o in enumerate(entries) if j != i)
        rows.append((rect_area(g) - rect_area(e), rect_margin(g) - rect_margin(e), d_ovl, counts[i] / M))
    order = sorted(range(len(entries)), key=lambda i: (rows[i][0], rows[i][1], i))
    return rows, order


def random_entries(rng, n, side=0.3):
    lo = rng.random((n, 2))
    return rects_from(lo, lo + rng.random((n, 2)) * side)


class TestRankChildren:
    def test_order_by_area_increase(self):
        cands = rank_candidate_children([A, B], [30, 40], Rect((1.5, 1.5), (1.6, 1.6)), 2, 50)
        assert [c.entry_index for c in cands] == [1, 0]
        assert cands[0].delta_area == pytest.approx(1.25)
        assert cands[1].delta_area == pytest.approx(1.56)
        assert cands[0].occupancy == pytest.approx(0.8)

    def test_single_child(self):
        cands = rank_candidate_children([A], [25], Rect((5, 5), (6, 6)), 2, 50)
        assert len(cands) == 1 and choose_state(cands, 2).valid_actions == 1

    def test_top_two_of_fifty(self, rng):
        entries = random_entries(rng, 50)
        counts = rng.integers(20, 51, 50)
        obj = random_entries(rng, 1)[0]
        rows, order = child_oracle(entries, counts, obj, 50)
        cands = rank_candidate_children(entries, counts, obj, 2, 50)
        assert [c.entry_index for c in cands] == order[:2]

    def test_full_fanout_reproduces_sort(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 20))
            entries = random_entries(rng, n)
            counts = rng.integers(1, 11, n)
            obj = random_entries(rng, 1)[0]
            rows, order = child_oracle(entries, counts, obj, 10)
            cands = rank_candidate_children(entries, counts, obj, n, 10)
            assert [c.entry_index for c in cands] == order
            for c in cands:
                want = rows[c.entry_index]
                got = (c.delta_area, c.delta_margin, c.delta_overlap, c.occupancy)
                assert got == pytest.approx(want, abs=1e-12)

    def test_margin_breaks_area_ties(self):
        # Degenerate segments: both area increases are 0, margin increases are 2.5 and 2.
        b, a = Rect((0, 0), (0.5, 0)), Rect((0, 0), (1, 0))
        cands = rank_candidate_children([b, a], [1, 1], Rect((3, 0), (3, 0)), 2, 50)
        assert [c.entry_index for c in cands] == [1, 0]
        assert [c.delta_margin for c in cands] == [2.0, 2.5]


class TestChooseState:
    def test_zero_max_rule(self):
        cands = [CandidateChild(0, 0.0, 0.0, 0.0, 0.4), CandidateChild(1, 0.0, 0.0, 0.0, 0.9)]
        s = choose_state(cands, 2)
        assert s.values.tolist() == [0, 0, 0, 0.4, 0, 0, 0, 0.9]

    def test_area_normalization(self):
        cands = rank_candidate_children([A, B], [30, 40], Rect((1.5, 1.5), (1.6, 1.6)), 2, 50)
        s = choose_state(cands, 2).values
        assert s[0] == pytest.approx(1.25 / 1.56) and round(s[0], 3) == 0.801
        assert s[4] == 1.0

    def test_padding(self):
        s = choose_state([CandidateChild(0, 2.0, 3.0, 0.5, 0.6)], 3)
        assert s.values.tolist() == [1, 1, 1, 0.6] + [0] * 8
        assert s.valid_actions == 1

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            choose_state([], 2)
        with pytest.raises(ValueError):
            StateVector(np.zeros(7), 1)


class TestContainment:
    def test_inside_one(self):
        assert containment_shortcut([A, B], Rect((2.1, 2.1), (2.2, 2.2))) == 1

    def test_nested_picks_smaller(self):
        outer, inner = Rect((0, 0), (10, 10)), Rect((1, 1), (3, 3))
        assert containment_shortcut([outer, inner], Rect((2, 2), (2.5, 2.5))) == 1

    def test_straddling(self):
        assert containment_shortcut([A, B], Rect((0.5, 0.5), (2.5, 2.5))) is None


class TestEnumerateSplits:
    def test_collinear(self):
        c = enumerate_candidate_splits(COLLINEAR, 2, 4)
        assert len(c.all) == 4
        x = [s for s in c.zero_overlap if s.axis == 0]
        assert [s.position for s in x] == [2, 3]
        assert all(s.total_area == 5.0 for s in x)
        # equal y coordinates sort by id, so the y candidates repeat the x partitions
        assert [c.groups(s) for s in c.zero_overlap if s.axis == 1] == [c.groups(s) for s in x]
        assert [(s.axis, s.position) for s in c.zero_overlap[:2]] == [(0, 2), (0, 3)]

    def test_identical_entries(self):
        c = enumerate_candidate_splits([Rect((0, 0), (1, 1))] * 5, 2, 4)
        assert c.zero_overlap == []

    @pytest.mark.parametrize("M,m,d", [(4, 2, 2), (50, 20, 2), (9, 3, 3)])
    def test_candidate_count(self, M, m, d, rng):
        lo = rng.random((M + 1, d))
        c = enumerate_candidate_splits(rects_from(lo, lo + 0.1), m, M)
        for axis in range(d):
            assert sum(s.axis == axis for s in c.all) == M + 2 - 2 * m

    def test_contiguous_runs_and_geometry(self, rng):
        for _ in range(100):
            M = int(rng.integers(3, 15))
            m = int(rng.integers(1, M // 2 + 1))
            entries = random_entries(rng, M + 1)
            c = enumerate_candidate_splits(entries, m, M)
            keys = [(s.total_area, s.total_margin, s.axis, s.position) for s in c.all]
            assert keys == sorted(keys)
            for s in c.all:
                order = sorted(range(M + 1), key=lambda i: (entries[i].lo[s.axis], entries[i].hi[s.axis], i))
                g1, g2 = c.groups(s)
                assert g1 == tuple(sorted(order[: s.position])) and g2 == tuple(sorted(order[s.position :]))
                b1 = entries[g1[0]]
                for i in g1[1:]:
                    b1 = rect_union(b1, entries[i])
                assert s.area1 == pytest.approx(rect_area(b1))
                assert s.group1_mbr == b1


class TestSplitState:
    def test_collinear_blocks(self):
        c = enumerate_candidate_splits(COLLINEAR, 2, 4)
        s = split_state(c.zero_overlap[:2], 2).values
        assert s[:4] == pytest.approx([2 / 3, 1, 3 / 4, 1])
        assert s[4:] == pytest.approx([1, 2 / 3, 1, 3 / 4])

    def test_identical_geometry_blocks(self):
        cs = CandidateSplit(0, 2, A, B, 1.0, 2.0, 2.0, 3.0, 0.0)
        s = split_state([cs, cs], 2).values
        assert np.array_equal(s[:4], s[4:])

    def test_single_candidate_self_normalized(self):
        cs = CandidateSplit(0, 2, A, B, 1.0, 2.0, 2.0, 3.0, 0.0)
        s = split_state([cs], 3).values
        assert s[1] == 1.0 and s[3] == 1.0 and not s[4:].any()


class TestSpecialCase:
    def test_one_zero_overlap(self):
        entries = [Rect((0, 0), (1, 1)), Rect((0.5, 0.5), (1.5, 1.5)), Rect((5, 0.2), (6, 1.2))]
        c = enumerate_candidate_splits(entries, 1, 2)
        assert len(c.zero_overlap) == 1
        assert split_special_case(c) == c.zero_overlap[0]

    def test_none_zero_overlap_gives_global_min(self, rng):
        entries = [Rect((0, 0), (1, 1))] * 2 + [Rect((0.1, 0.1), (1.2, 1.1))] * 3
        c = enumerate_candidate_splits(entries, 2, 4)
        forced = split_special_case(c)
        assert forced.overlap == min(s.overlap for s in c.all)

    def test_three_zero_overlap(self):
        c = enumerate_candidate_splits([Rect((float(i), 0.0), (i + 0.5, 1.0)) for i in range(7)], 2, 6)
        assert len(c.zero_overlap) >= 3
        assert split_special_case(c) is None


class TestMaskedActions:
    def test_padding_never_selected(self, rng):
        net = QNetwork.init(4, rng)
        # make padded slots very attractive
        net.b2[2:] = 1e6
        for nv in (1, 2, 3):
            s = np.zeros(16)
            s[: 4 * nv] = rng.random(4 * nv)
            assert K.greedy_action(net.params(), s, nv) < nv


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3), k=st.integers(1, 5))
def test_scale_invariance_and_range(seed, scale, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    lo = rng.random((n, 2))
    hi = lo + rng.random((n, 2)) * 0.3
    counts = rng.integers(1, 11, n)
    olo = rng.random(2)
    ohi = olo + rng.random(2) * 0.1
    base = rank_candidate_children(rects_from(lo, hi), counts, Rect(tuple(olo), tuple(ohi)), k, 10)
    scaled = rank_candidate_children(
        rects_from(lo * scale, hi * scale), counts, Rect(tuple(olo * scale), tuple(ohi * scale)), k, 10
    )
    assert [c.entry_index for c in base] == [c.entry_index for c in scaled]
    s1, s2 = choose_state(base, k).values, choose_state(scaled, k).values
    assert s1.shape == (4 * k,)
    assert np.all((s1 >= 0) & (s1 <= 1))
    assert s1 == pytest.approx(s2, abs=1e-9)

    M = 9
    m = int(rng.integers(1, M // 2 + 1))
    elo = rng.random((M + 1, 2))
    ehi = elo + rng.random((M + 1, 2)) * 0.2
    c1 = enumerate_candidate_splits(rects_from(elo, ehi), m, M)
    c2 = enumerate_candidate_splits(rects_from(elo * scale, ehi * scale), m, M)
    assert [(s.axis, s.position) for s in c1.all] == [(s.axis, s.position) for s in c2.all]
    top = c1.all[:k]
    v = split_state(top, k).values
    assert np.all((v >= 0) & (v <= 1))
    assert v == pytest.approx(split_state(c2.all[:k], k).values, abs=1e-9)
