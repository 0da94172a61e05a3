"""Compiled kernels over the node arena.

Every tree operation that runs per insertion or per query lives here so that
building a million-object tree stays in the seconds range. The arena layout is
shared with :class:`rlrtree.rtree.RTree`:

    lo, hi  float64 (cap, M+1, d)   entry rectangles
    ref     int64   (cap, M+1)      child node handle (inner) or object id (leaf)
    cnt     int64   (cap,)          entry count
    lvl     int64   (cap,)          0 for leaves
    par     int64   (cap,)          parent handle, -1 for the root
    meta    int64   (3,)            [root, node count, object count]
"""

import math

import numpy as np
from numba import njit

ROOT, NNODES, NOBJ = 0, 1, 2

CHOOSE_MIN_AREA = 0
CHOOSE_RSTAR = 1
CHOOSE_RL = 2

SPLIT_LINEAR = 0
SPLIT_QUADRATIC = 1
SPLIT_GREENE = 2
SPLIT_RSTAR = 3
SPLIT_MIN_OVERLAP = 4
SPLIT_RL = 5

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

# feature columns of an enumerated split candidate
F_AREA1, F_AREA2, F_MARGIN1, F_MARGIN2, F_OVERLAP = 0, 1, 2, 3, 4

jit = njit(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# rectangle arithmetic on 1-d coordinate rows
# ---------------------------------------------------------------------------


@jit
def area(lo, hi):
    a = 1.0
    for i in range(lo.shape[0]):
        a *= hi[i] - lo[i]
    return a


@jit
def margin(lo, hi):
    s = 0.0
    for i in range(lo.shape[0]):
        s += hi[i] - lo[i]
    return s


@jit
def union_area(alo, ahi, blo, bhi):
    a = 1.0
    for i in range(alo.shape[0]):
        a *= max(ahi[i], bhi[i]) - min(alo[i], blo[i])
    return a


@jit
def union_margin(alo, ahi, blo, bhi):
    s = 0.0
    for i in range(alo.shape[0]):
        s += max(ahi[i], bhi[i]) - min(alo[i], blo[i])
    return s


@jit
def overlap_area(alo, ahi, blo, bhi):
    a = 1.0
    for i in range(alo.shape[0]):
        w = min(ahi[i], bhi[i]) - max(alo[i], blo[i])
        if w <= 0.0:
            return 0.0
        a *= w
    return a


@jit
def union_overlap_area(alo, ahi, olo, ohi, blo, bhi):
    """Overlap between union(a, o) and b without materialising the union."""
    a = 1.0
    for i in range(alo.shape[0]):
        w = min(max(ahi[i], ohi[i]), bhi[i]) - max(min(alo[i], olo[i]), blo[i])
        if w <= 0.0:
            return 0.0
        a *= w
    return a


@jit
def contains(alo, ahi, blo, bhi):
    for i in range(alo.shape[0]):
        if blo[i] < alo[i] or bhi[i] > ahi[i]:
            return False
    return True


@jit
def intersects(alo, ahi, blo, bhi):
    for i in range(alo.shape[0]):
        if alo[i] > bhi[i] or blo[i] > ahi[i]:
            return False
    return True


@jit
def mindist_sq(lo, hi, q):
    s = 0.0
    for i in range(q.shape[0]):
        if q[i] < lo[i]:
            t = lo[i] - q[i]
            s += t * t
        elif q[i] > hi[i]:
            t = q[i] - hi[i]
            s += t * t
    return s


@jit
def bounding(elo, ehi, n, out_lo, out_hi):
    for j in range(elo.shape[1]):
        out_lo[j] = elo[0, j]
        out_hi[j] = ehi[0, j]
    for i in range(1, n):
        for j in range(elo.shape[1]):
            if elo[i, j] < out_lo[j]:
                out_lo[j] = elo[i, j]
            if ehi[i, j] > out_hi[j]:
                out_hi[j] = ehi[i, j]


# ---------------------------------------------------------------------------
# value network (greedy inference)
# ---------------------------------------------------------------------------


@jit
def q_forward(w1, b1, w2, b2, s, out):
    hidden = np.empty(w1.shape[0])
    for i in range(w1.shape[0]):
        z = b1[i]
        for j in range(w1.shape[1]):
            z += w1[i, j] * s[j]
        if z > 0.0:
            hidden[i] = SELU_LAMBDA * z
        else:
            hidden[i] = SELU_LAMBDA * SELU_ALPHA * math.expm1(z)
    for a in range(w2.shape[0]):
        q = b2[a]
        for i in range(w2.shape[1]):
            q += w2[a, i] * hidden[i]
        out[a] = q


@jit
def greedy_action(net, s, n_valid):
    w1, b1, w2, b2 = net
    q = np.empty(w2.shape[0])
    q_forward(w1, b1, w2, b2, s, q)
    best = 0
    for a in range(1, n_valid):
        if q[a] > q[best]:
            best = a
    return best


# ---------------------------------------------------------------------------
# ChooseSubtree
# ---------------------------------------------------------------------------


@jit
def choose_min_area(elo, ehi, n, olo, ohi):
    best = 0
    best_d = np.inf
    best_a = np.inf
    for i in range(n):
        a = area(elo[i], ehi[i])
        ua = union_area(elo[i], ehi[i], olo, ohi)
        d = ua - a
        if d < best_d or (d == best_d and ua < best_a):
            best = i
            best_d = d
            best_a = ua
    return best


@jit
def overlap_enlargement(elo, ehi, n, i, olo, ohi):
    s = 0.0
    for j in range(n):
        if j != i:
            s += union_overlap_area(elo[i], ehi[i], olo, ohi, elo[j], ehi[j]) - overlap_area(
                elo[i], ehi[i], elo[j], ehi[j]
            )
    return s


@jit
def choose_rstar(elo, ehi, n, olo, ohi, children_are_leaves):
    if not children_are_leaves:
        return choose_min_area(elo, ehi, n, olo, ohi)
    best = 0
    best_o = np.inf
    best_d = np.inf
    best_a = np.inf
    for i in range(n):
        o = overlap_enlargement(elo, ehi, n, i, olo, ohi)
        a = area(elo[i], ehi[i])
        d = union_area(elo[i], ehi[i], olo, ohi) - a
        if o < best_o or (o == best_o and (d < best_d or (d == best_d and a < best_a))):
            best = i
            best_o = o
            best_d = d
            best_a = a
    return best


@jit
def containment_child(elo, ehi, n, olo, ohi):
    """Smallest-area entry whose rectangle contains the object, or -1."""
    best = -1
    best_a = np.inf
    for i in range(n):
        if contains(elo[i], ehi[i], olo, ohi):
            a = area(elo[i], ehi[i])
            if a < best_a:
                best = i
                best_a = a
    return best


@jit
def cs_candidates(elo, ehi, n, child_cnt, olo, ohi, k, M, cand, raw):
    """Top-k entries by area increase with their four raw features.

    raw[j] = (area increase, margin increase, overlap increase, occupancy).
    Returns the number of candidates written.
    """
    nv = min(k, n)
    da = np.empty(n)
    dm = np.empty(n)
    taken = np.zeros(n, np.bool_)
    for i in range(n):
        da[i] = union_area(elo[i], ehi[i], olo, ohi) - area(elo[i], ehi[i])
        dm[i] = union_margin(elo[i], ehi[i], olo, ohi) - margin(elo[i], ehi[i])
    for j in range(nv):
        b = -1
        for i in range(n):
            if taken[i]:
                continue
            if b < 0 or da[i] < da[b] or (da[i] == da[b] and dm[i] < dm[b]):
                b = i
        taken[b] = True
        cand[j] = b
        raw[j, 0] = da[b]
        raw[j, 1] = dm[b]
        raw[j, 2] = overlap_enlargement(elo, ehi, n, b, olo, ohi)
        raw[j, 3] = child_cnt[b] / M
    return nv


@jit
def cs_state(raw, nv, k, state):
    for i in range(4 * k):
        state[i] = 0.0
    for f in range(3):
        mx = 0.0
        for j in range(nv):
            if raw[j, f] > mx:
                mx = raw[j, f]
        if mx > 0.0:
            for j in range(nv):
                state[4 * j + f] = raw[j, f] / mx
    for j in range(nv):
        state[4 * j + 3] = raw[j, 3]


@jit
def rl_choose_prepare(lo, hi, ref, cnt, node, olo, ohi, k, M, cand, state):
    """State of a ChooseSubtree decision.

    Returns (shortcut entry or -1, number of valid actions). When the
    containment shortcut fires the state buffers are left untouched.
    """
    n = cnt[node]
    c = containment_child(lo[node], hi[node], n, olo, ohi)
    if c >= 0:
        return c, 0
    child_cnt = np.empty(n, np.int64)
    for i in range(n):
        child_cnt[i] = cnt[ref[node, i]]
    raw = np.empty((k, 4))
    nv = cs_candidates(lo[node], hi[node], n, child_cnt, olo, ohi, k, M, cand, raw)
    cs_state(raw, nv, k, state)
    return -1, nv


@jit
def choose(lo, hi, ref, cnt, lvl, node, olo, ohi, rule, M, k, cs_net):
    n = cnt[node]
    if rule == CHOOSE_MIN_AREA:
        return choose_min_area(lo[node], hi[node], n, olo, ohi)
    if rule == CHOOSE_RSTAR:
        return choose_rstar(lo[node], hi[node], n, olo, ohi, lvl[node] == 1)
    cand = np.empty(k, np.int64)
    state = np.empty(4 * k)
    c, nv = rl_choose_prepare(lo, hi, ref, cnt, node, olo, ohi, k, M, cand, state)
    if c >= 0:
        return c
    return cand[greedy_action(cs_net, state, nv)]


@jit
def descend(lo, hi, ref, cnt, lvl, meta, olo, ohi, rule, M, k, cs_net):
    """Leaf reached by ChooseSubtree, without modifying the tree."""
    node = meta[ROOT]
    while lvl[node] > 0:
        node = ref[node, choose(lo, hi, ref, cnt, lvl, node, olo, ohi, rule, M, k, cs_net)]
    return node


# ---------------------------------------------------------------------------
# Split
# ---------------------------------------------------------------------------


@jit
def _sorted_before(elo, ehi, ids, a, b, axis):
    if elo[a, axis] != elo[b, axis]:
        return elo[a, axis] < elo[b, axis]
    if ehi[a, axis] != ehi[b, axis]:
        return ehi[a, axis] < ehi[b, axis]
    return ids[a] < ids[b]


@jit
def sort_axis(elo, ehi, ids, n, axis, order):
    for i in range(n):
        order[i] = i
    for i in range(1, n):
        x = order[i]
        j = i - 1
        while j >= 0 and _sorted_before(elo, ehi, ids, x, order[j], axis):
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = x


@jit
def _distribute(elo, ehi, n, m, s1, s2, quadratic, mask):
    d = elo.shape[1]
    g1lo = elo[s1].copy()
    g1hi = ehi[s1].copy()
    g2lo = elo[s2].copy()
    g2hi = ehi[s2].copy()
    assigned = np.zeros(n, np.bool_)
    for i in range(n):
        mask[i] = False
    assigned[s1] = True
    assigned[s2] = True
    mask[s1] = True
    n1 = 1
    n2 = 1
    remaining = n - 2
    while remaining > 0:
        if n1 + remaining == m or n2 + remaining == m:
            to_first = n1 + remaining == m
            for i in range(n):
                if not assigned[i]:
                    assigned[i] = True
                    mask[i] = to_first
            break
        a1 = area(g1lo, g1hi)
        a2 = area(g2lo, g2hi)
        pick = -1
        if quadratic:
            best_diff = -1.0
            for i in range(n):
                if assigned[i]:
                    continue
                d1 = union_area(g1lo, g1hi, elo[i], ehi[i]) - a1
                d2 = union_area(g2lo, g2hi, elo[i], ehi[i]) - a2
                diff = abs(d1 - d2)
                if diff > best_diff:
                    best_diff = diff
                    pick = i
        else:
            for i in range(n):
                if not assigned[i]:
                    pick = i
                    break
        d1 = union_area(g1lo, g1hi, elo[pick], ehi[pick]) - a1
        d2 = union_area(g2lo, g2hi, elo[pick], ehi[pick]) - a2
        if d1 < d2:
            first = True
        elif d2 < d1:
            first = False
        elif a1 < a2:
            first = True
        elif a2 < a1:
            first = False
        else:
            first = n1 <= n2
        assigned[pick] = True
        remaining -= 1
        if first:
            mask[pick] = True
            n1 += 1
            for j in range(d):
                g1lo[j] = min(g1lo[j], elo[pick, j])
                g1hi[j] = max(g1hi[j], ehi[pick, j])
        else:
            n2 += 1
            for j in range(d):
                g2lo[j] = min(g2lo[j], elo[pick, j])
                g2hi[j] = max(g2hi[j], ehi[pick, j])


@jit
def linear_seeds(elo, ehi, n):
    best = -np.inf
    s1 = 0
    s2 = 1
    for ax in range(elo.shape[1]):
        high_low = 0
        for i in range(1, n):
            if elo[i, ax] > elo[high_low, ax]:
                high_low = i
        low_high = -1
        for i in range(n):
            if i != high_low and (low_high < 0 or ehi[i, ax] < ehi[low_high, ax]):
                low_high = i
        lo_all = elo[0, ax]
        hi_all = ehi[0, ax]
        for i in range(1, n):
            lo_all = min(lo_all, elo[i, ax])
            hi_all = max(hi_all, ehi[i, ax])
        sep = elo[high_low, ax] - ehi[low_high, ax]
        width = hi_all - lo_all
        if width > 0.0:
            sep = sep / width
        if sep > best:
            best = sep
            s1 = low_high
            s2 = high_low
    return s1, s2


@jit
def quadratic_seeds(elo, ehi, n):
    best = -np.inf
    s1 = 0
    s2 = 1
    for i in range(n):
        ai = area(elo[i], ehi[i])
        for j in range(i + 1, n):
            waste = union_area(elo[i], ehi[i], elo[j], ehi[j]) - ai - area(elo[j], ehi[j])
            if waste > best:
                best = waste
                s1 = i
                s2 = j
    return s1, s2


@jit
def split_linear(elo, ehi, n, m, mask):
    s1, s2 = linear_seeds(elo, ehi, n)
    _distribute(elo, ehi, n, m, s1, s2, False, mask)


@jit
def split_quadratic(elo, ehi, n, m, mask):
    s1, s2 = quadratic_seeds(elo, ehi, n)
    _distribute(elo, ehi, n, m, s1, s2, True, mask)


@jit
def greene_axis(elo, ehi, n):
    s1, s2 = quadratic_seeds(elo, ehi, n)
    best = -np.inf
    axis = 0
    for ax in range(elo.shape[1]):
        lo_all = elo[0, ax]
        hi_all = ehi[0, ax]
        for i in range(1, n):
            lo_all = min(lo_all, elo[i, ax])
            hi_all = max(hi_all, ehi[i, ax])
        width = hi_all - lo_all
        if width <= 0.0:
            continue
        sep = max(elo[s1, ax], elo[s2, ax]) - min(ehi[s1, ax], ehi[s2, ax])
        if sep / width > best:
            best = sep / width
            axis = ax
    return axis


@jit
def split_greene(elo, ehi, ids, n, mask):
    axis = greene_axis(elo, ehi, n)
    order = np.empty(n, np.int64)
    sort_axis(elo, ehi, ids, n, axis, order)
    half = n // 2
    for i in range(n):
        mask[i] = False
    for i in range(half):
        mask[order[i]] = True
    if n % 2 == 1:
        d = elo.shape[1]
        g1lo = np.empty(d)
        g1hi = np.empty(d)
        g2lo = np.empty(d)
        g2hi = np.empty(d)
        for j in range(d):
            g1lo[j] = np.inf
            g1hi[j] = -np.inf
            g2lo[j] = np.inf
            g2hi[j] = -np.inf
        for i in range(n):
            if i == half:
                continue
            e = order[i]
            for j in range(d):
                if i < half:
                    g1lo[j] = min(g1lo[j], elo[e, j])
                    g1hi[j] = max(g1hi[j], ehi[e, j])
                else:
                    g2lo[j] = min(g2lo[j], elo[e, j])
                    g2hi[j] = max(g2hi[j], ehi[e, j])
        mask[order[half]] = not (area(g2lo, g2hi) < area(g1lo, g1hi))


@jit
def enumerate_splits(elo, ehi, ids, n, m, orders, cax, cpos, feats):
    """Sorted-sequence split candidates over every axis.

    For each axis the entries are ordered by (lower, upper, id); candidate
    ``pos`` puts the first ``pos`` entries of that order in group 1, for
    m <= pos <= n - m. Candidates are written in (axis, pos) order.
    """
    d = elo.shape[1]
    plo = np.empty((n, d))
    phi = np.empty((n, d))
    slo = np.empty((n, d))
    shi = np.empty((n, d))
    t = 0
    for axis in range(d):
        order = orders[axis]
        sort_axis(elo, ehi, ids, n, axis, order)
        for j in range(d):
            plo[0, j] = elo[order[0], j]
            phi[0, j] = ehi[order[0], j]
            slo[n - 1, j] = elo[order[n - 1], j]
            shi[n - 1, j] = ehi[order[n - 1], j]
        for i in range(1, n):
            e = order[i]
            for j in range(d):
                plo[i, j] = min(plo[i - 1, j], elo[e, j])
                phi[i, j] = max(phi[i - 1, j], ehi[e, j])
        for i in range(n - 2, -1, -1):
            e = order[i]
            for j in range(d):
                slo[i, j] = min(slo[i + 1, j], elo[e, j])
                shi[i, j] = max(shi[i + 1, j], ehi[e, j])
        for pos in range(m, n - m + 1):
            feats[t, F_AREA1] = area(plo[pos - 1], phi[pos - 1])
            feats[t, F_AREA2] = area(slo[pos], shi[pos])
            feats[t, F_MARGIN1] = margin(plo[pos - 1], phi[pos - 1])
            feats[t, F_MARGIN2] = margin(slo[pos], shi[pos])
            feats[t, F_OVERLAP] = overlap_area(plo[pos - 1], phi[pos - 1], slo[pos], shi[pos])
            cax[t] = axis
            cpos[t] = pos
            t += 1
    return t


@jit
def sort_candidates(feats, t, out):
    """Stable order by (total area, total margin); generation order breaks ties."""
    for i in range(t):
        out[i] = i
    for i in range(1, t):
        x = out[i]
        xa = feats[x, F_AREA1] + feats[x, F_AREA2]
        xm = feats[x, F_MARGIN1] + feats[x, F_MARGIN2]
        j = i - 1
        while j >= 0:
            y = out[j]
            ya = feats[y, F_AREA1] + feats[y, F_AREA2]
            ym = feats[y, F_MARGIN1] + feats[y, F_MARGIN2]
            if xa < ya or (xa == ya and xm < ym):
                out[j + 1] = y
                j -= 1
            else:
                break
        out[j + 1] = x


@jit
def min_overlap_choice(feats, t):
    best = 0
    for c in range(1, t):
        o = feats[c, F_OVERLAP]
        bo = feats[best, F_OVERLAP]
        if o < bo or (
            o == bo and feats[c, F_AREA1] + feats[c, F_AREA2] < feats[best, F_AREA1] + feats[best, F_AREA2]
        ):
            best = c
    return best


@jit
def rstar_choice(feats, cax, t, d):
    sums = np.zeros(d)
    for c in range(t):
        sums[cax[c]] += feats[c, F_MARGIN1] + feats[c, F_MARGIN2]
    axis = 0
    for a in range(1, d):
        if sums[a] < sums[axis]:
            axis = a
    best = -1
    for c in range(t):
        if cax[c] != axis:
            continue
        if best < 0:
            best = c
            continue
        o = feats[c, F_OVERLAP]
        bo = feats[best, F_OVERLAP]
        if o < bo or (
            o == bo and feats[c, F_AREA1] + feats[c, F_AREA2] < feats[best, F_AREA1] + feats[best, F_AREA2]
        ):
            best = c
    return best


@jit
def split_state(feats, sel, nv, k, state):
    for i in range(4 * k):
        state[i] = 0.0
    max_a = 0.0
    max_m = 0.0
    for j in range(nv):
        c = sel[j]
        max_a = max(max_a, feats[c, F_AREA1], feats[c, F_AREA2])
        max_m = max(max_m, feats[c, F_MARGIN1], feats[c, F_MARGIN2])
    for j in range(nv):
        c = sel[j]
        if max_a > 0.0:
            state[4 * j] = feats[c, F_AREA1] / max_a
            state[4 * j + 1] = feats[c, F_AREA2] / max_a
        if max_m > 0.0:
            state[4 * j + 2] = feats[c, F_MARGIN1] / max_m
            state[4 * j + 3] = feats[c, F_MARGIN2] / max_m


@jit
def rl_split_prepare(elo, ehi, ids, n, m, k, orders, cax, cpos, feats, sel, state):
    """Candidates and state of a Split decision.

    Returns (forced candidate or -1, number of valid actions). The forced
    candidate is the global minimum-overlap split, used when at most one
    candidate yields non-overlapping groups.
    """
    t = enumerate_splits(elo, ehi, ids, n, m, orders, cax, cpos, feats)
    ordered = np.empty(t, np.int64)
    sort_candidates(feats, t, ordered)
    nz = 0
    for i in range(t):
        c = ordered[i]
        if feats[c, F_OVERLAP] == 0.0:
            if nz < k:
                sel[nz] = c
            nz += 1
    if nz <= 1:
        return min_overlap_choice(feats, t), 0
    nv = min(k, nz)
    split_state(feats, sel, nv, k, state)
    return -1, nv


@jit
def candidate_mask(orders, axis, pos, n, mask):
    for i in range(n):
        mask[i] = False
    for i in range(pos):
        mask[orders[axis, i]] = True


@jit
def split_mask(elo, ehi, ids, n, m, rule, k, sp_net, mask):
    if rule == SPLIT_LINEAR:
        split_linear(elo, ehi, n, m, mask)
        return
    if rule == SPLIT_QUADRATIC:
        split_quadratic(elo, ehi, n, m, mask)
        return
    if rule == SPLIT_GREENE:
        split_greene(elo, ehi, ids, n, mask)
        return
    d = elo.shape[1]
    per_axis = n - 2 * m + 1
    orders = np.empty((d, n), np.int64)
    cax = np.empty(d * per_axis, np.int64)
    cpos = np.empty(d * per_axis, np.int64)
    feats = np.empty((d * per_axis, 5))
    if rule == SPLIT_RL:
        sel = np.empty(k, np.int64)
        state = np.empty(4 * k)
        c, nv = rl_split_prepare(elo, ehi, ids, n, m, k, orders, cax, cpos, feats, sel, state)
        if c < 0:
            c = sel[greedy_action(sp_net, state, nv)]
    else:
        t = enumerate_splits(elo, ehi, ids, n, m, orders, cax, cpos, feats)
        if rule == SPLIT_RSTAR:
            c = rstar_choice(feats, cax, t, d)
        else:
            c = min_overlap_choice(feats, t)
    candidate_mask(orders, cax[c], cpos[c], n, mask)


# ---------------------------------------------------------------------------
# structural mutation
# ---------------------------------------------------------------------------


@jit
def enlarge_entry(lo, hi, node, i, olo, ohi):
    for j in range(olo.shape[0]):
        if olo[j] < lo[node, i, j]:
            lo[node, i, j] = olo[j]
        if ohi[j] > hi[node, i, j]:
            hi[node, i, j] = ohi[j]


@jit
def add_entry(lo, hi, ref, cnt, node, elo, ehi, eref):
    c = cnt[node]
    for j in range(elo.shape[0]):
        lo[node, c, j] = elo[j]
        hi[node, c, j] = ehi[j]
    ref[node, c] = eref
    cnt[node] = c + 1


@jit
def apply_split(lo, hi, ref, cnt, lvl, par, meta, node, mask):
    """Move entries with mask False to a new sibling node.

    Returns the parent that received the new entry, or -1 when the root was
    split and a new root created.
    """
    d = lo.shape[2]
    n = cnt[node]
    new = meta[NNODES]
    meta[NNODES] += 1
    lvl[new] = lvl[node]
    cnt[new] = 0
    inner = lvl[node] > 0
    w = 0
    for i in range(n):
        if mask[i]:
            if w != i:
                for j in range(d):
                    lo[node, w, j] = lo[node, i, j]
                    hi[node, w, j] = hi[node, i, j]
                ref[node, w] = ref[node, i]
            w += 1
        else:
            c = cnt[new]
            for j in range(d):
                lo[new, c, j] = lo[node, i, j]
                hi[new, c, j] = hi[node, i, j]
            ref[new, c] = ref[node, i]
            if inner:
                par[ref[node, i]] = new
            cnt[new] = c + 1
    cnt[node] = w
    nlo = np.empty(d)
    nhi = np.empty(d)
    slo = np.empty(d)
    shi = np.empty(d)
    bounding(lo[node], hi[node], w, nlo, nhi)
    bounding(lo[new], hi[new], cnt[new], slo, shi)
    p = par[node]
    if p < 0:
        root = meta[NNODES]
        meta[NNODES] += 1
        lvl[root] = lvl[node] + 1
        cnt[root] = 0
        par[root] = -1
        add_entry(lo, hi, ref, cnt, root, nlo, nhi, node)
        add_entry(lo, hi, ref, cnt, root, slo, shi, new)
        par[node] = root
        par[new] = root
        meta[ROOT] = root
        return -1
    for s in range(cnt[p]):
        if ref[p, s] == node:
            for j in range(d):
                lo[p, s, j] = nlo[j]
                hi[p, s, j] = nhi[j]
            break
    add_entry(lo, hi, ref, cnt, p, slo, shi, new)
    par[new] = p
    return p


@jit
def resolve_overflow(lo, hi, ref, cnt, lvl, par, meta, node, M, m, rule, k, sp_net):
    mask = np.empty(M + 1, np.bool_)
    while node >= 0 and cnt[node] > M:
        split_mask(lo[node], hi[node], ref[node], cnt[node], m, rule, k, sp_net, mask)
        node = apply_split(lo, hi, ref, cnt, lvl, par, meta, node, mask)


@jit
def insert_one(lo, hi, ref, cnt, lvl, par, meta, olo, ohi, oid, M, m, crule, srule, k, cs_net, sp_net):
    node = meta[ROOT]
    while lvl[node] > 0:
        i = choose(lo, hi, ref, cnt, lvl, node, olo, ohi, crule, M, k, cs_net)
        enlarge_entry(lo, hi, node, i, olo, ohi)
        node = ref[node, i]
    add_entry(lo, hi, ref, cnt, node, olo, ohi, oid)
    meta[NOBJ] += 1
    resolve_overflow(lo, hi, ref, cnt, lvl, par, meta, node, M, m, srule, k, sp_net)


@jit
def insert_many(lo, hi, ref, cnt, lvl, par, meta, olo, ohi, oids, start, M, m, crule, srule, k, cs_net, sp_net):
    """Insert objects from ``start`` on; stops early when the arena is nearly full.

    Returns the index of the first object not inserted.
    """
    cap = lo.shape[0]
    for i in range(start, oids.shape[0]):
        if meta[NNODES] + lvl[meta[ROOT]] + 3 > cap:
            return i
        insert_one(lo, hi, ref, cnt, lvl, par, meta, olo[i], ohi[i], oids[i], M, m, crule, srule, k, cs_net, sp_net)
    return oids.shape[0]


@jit
def fill_or_reject(lo, hi, ref, cnt, lvl, par, meta, olo, ohi, oids, M, rule, take):
    """Insert each object whose leaf has room; flag the others in ``take``.

    The tree never splits here, so the arena cannot grow.
    """
    dummy = (np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    for i in range(oids.shape[0]):
        leaf = descend(lo, hi, ref, cnt, lvl, meta, olo[i], ohi[i], rule, M, 1, dummy)
        if cnt[leaf] >= M:
            take[i] = True
            continue
        take[i] = False
        node = meta[ROOT]
        while lvl[node] > 0:
            c = choose(lo, hi, ref, cnt, lvl, node, olo[i], ohi[i], rule, M, 1, dummy)
            enlarge_entry(lo, hi, node, c, olo[i], ohi[i])
            node = ref[node, c]
        add_entry(lo, hi, ref, cnt, node, olo[i], ohi[i], oids[i])
        meta[NOBJ] += 1


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


@jit
def range_query(lo, hi, ref, cnt, lvl, root, qlo, qhi, out, stack):
    sp = 1
    stack[0] = root
    accesses = 0
    found = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        accesses += 1
        leaf = lvl[node] == 0
        for i in range(cnt[node]):
            if intersects(lo[node, i], hi[node, i], qlo, qhi):
                if leaf:
                    out[found] = ref[node, i]
                    found += 1
                else:
                    stack[sp] = ref[node, i]
                    sp += 1
    return accesses, found


@jit
def range_accesses(lo, hi, ref, cnt, lvl, root, qlos, qhis, out):
    """Node-access count per query; results are not materialised."""
    stack = np.empty(cnt.shape[0] + 1, np.int64)
    for q in range(qlos.shape[0]):
        sp = 1
        stack[0] = root
        accesses = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            accesses += 1
            if lvl[node] == 0:
                continue
            for i in range(cnt[node]):
                if intersects(lo[node, i], hi[node, i], qlos[q], qhis[q]):
                    stack[sp] = ref[node, i]
                    sp += 1
        out[q] = accesses


@jit
def knn_query(lo, hi, ref, cnt, lvl, root, q, K, best_d, best_id, stack_node, stack_d):
    """Depth-first branch and bound, children visited in MINDIST order.

    A subtree is pruned when its MINDIST exceeds the current K-th best; equal
    distances are still visited so id tie-breaks stay exact.
    """
    found = 0
    accesses = 0
    sp = 1
    stack_node[0] = root
    stack_d[0] = 0.0
    cd = np.empty(lo.shape[1])
    ci = np.empty(lo.shape[1], np.int64)
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        if found == K and stack_d[sp] > best_d[K - 1]:
            continue
        accesses += 1
        n = cnt[node]
        if lvl[node] == 0:
            for i in range(n):
                dist = mindist_sq(lo[node, i], hi[node, i], q)
                oid = ref[node, i]
                if found < K:
                    p = found
                    found += 1
                elif dist < best_d[K - 1] or (dist == best_d[K - 1] and oid < best_id[K - 1]):
                    p = K - 1
                else:
                    continue
                while p > 0 and (best_d[p - 1] > dist or (best_d[p - 1] == dist and best_id[p - 1] > oid)):
                    best_d[p] = best_d[p - 1]
                    best_id[p] = best_id[p - 1]
                    p -= 1
                best_d[p] = dist
                best_id[p] = oid
        else:
            for i in range(n):
                cd[i] = mindist_sq(lo[node, i], hi[node, i], q)
                ci[i] = i
            for i in range(1, n):
                x = ci[i]
                j = i - 1
                while j >= 0 and cd[x] < cd[ci[j]]:
                    ci[j + 1] = ci[j]
                    j -= 1
                ci[j + 1] = x
            # push farthest first so the nearest child is expanded next
            for r in range(n - 1, -1, -1):
                c = ci[r]
                if found == K and cd[c] > best_d[K - 1]:
                    continue
                stack_node[sp] = ref[node, c]
                stack_d[sp] = cd[c]
                sp += 1
    return accesses, found


# ---------------------------------------------------------------------------
# exploration during training
# ---------------------------------------------------------------------------


@jit
def _explore(net, state, nv, eps, u, v, max_nv):
    if nv > max_nv:
        nv = max_nv
    if nv == 1:
        return 0
    if u < eps:
        return min(int(v * nv), nv - 1)
    return greedy_action(net, state, nv)


@jit
def explore_insert_cs(
    lo, hi, ref, cnt, lvl, par, meta, olo, ohi, oid, M, m, srule, k, cs_net, sp_net,
    eps, u, v, max_nv, states, actions, nvalid,
):
    """Insert one object choosing subtrees epsilon-greedily.

    ``u`` and ``v`` hold one pre-drawn uniform pair per level. Each model
    decision is recorded in ``states``/``actions``/``nvalid``; the containment
    shortcut records nothing. Returns the number of recorded decisions.
    """
    cand = np.empty(k, np.int64)
    state = np.empty(4 * k)
    node = meta[ROOT]
    rec = 0
    depth = 0
    while lvl[node] > 0:
        c, nv = rl_choose_prepare(lo, hi, ref, cnt, node, olo, ohi, k, M, cand, state)
        if c < 0:
            a = _explore(cs_net, state, nv, eps, u[depth], v[depth], max_nv)
            states[rec] = state
            actions[rec] = a
            nvalid[rec] = min(nv, max_nv)
            rec += 1
            c = cand[a]
        enlarge_entry(lo, hi, node, c, olo, ohi)
        node = ref[node, c]
        depth += 1
    add_entry(lo, hi, ref, cnt, node, olo, ohi, oid)
    meta[NOBJ] += 1
    resolve_overflow(lo, hi, ref, cnt, lvl, par, meta, node, M, m, srule, k, sp_net)
    return rec


@jit
def explore_insert_split(
    lo, hi, ref, cnt, lvl, par, meta, olo, ohi, oid, M, m, crule, k, cs_net, sp_net,
    eps, u, v, max_nv, states, actions, nvalid,
):
    """Insert one object and split overflowing nodes epsilon-greedily.

    Forced minimum-overlap splits record nothing. Returns (number of recorded
    decisions, whether the leaf overflowed).
    """
    node = meta[ROOT]
    while lvl[node] > 0:
        i = choose(lo, hi, ref, cnt, lvl, node, olo, ohi, crule, M, k, cs_net)
        enlarge_entry(lo, hi, node, i, olo, ohi)
        node = ref[node, i]
    add_entry(lo, hi, ref, cnt, node, olo, ohi, oid)
    meta[NOBJ] += 1
    if cnt[node] <= M:
        return 0, False
    n = M + 1
    d = lo.shape[2]
    per_axis = n - 2 * m + 1
    orders = np.empty((d, n), np.int64)
    cax = np.empty(d * per_axis, np.int64)
    cpos = np.empty(d * per_axis, np.int64)
    feats = np.empty((d * per_axis, 5))
    sel = np.empty(k, np.int64)
    state = np.empty(4 * k)
    mask = np.empty(n, np.bool_)
    rec = 0
    depth = 0
    while node >= 0 and cnt[node] > M:
        c, nv = rl_split_prepare(lo[node], hi[node], ref[node], n, m, k, orders, cax, cpos, feats, sel, state)
        if c < 0:
            a = _explore(sp_net, state, nv, eps, u[depth], v[depth], max_nv)
            states[rec] = state
            actions[rec] = a
            nvalid[rec] = min(nv, max_nv)
            rec += 1
            c = sel[a]
        candidate_mask(orders, cax[c], cpos[c], n, mask)
        node = apply_split(lo, hi, ref, cnt, lvl, par, meta, node, mask)
        depth += 1
    return rec, True
