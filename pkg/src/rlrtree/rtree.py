"""Arena-stored R-Tree with policy-pluggable insertion.

Nodes live in preallocated arrays addressed by stable integer handles, so
policies and trainers can refer to nodes without holding references into the
tree. Node accesses are counted per query (the root included) and tallied on
the tree.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .dataset import Dataset, ObjectRecord
from .geometry import DimensionMismatch, Rect
from .policy import REFERENCE, InsertPolicy, Policy


@dataclass
class QueryStats:
    node_accesses: int
    result_count: int
    elapsed: int  # nanoseconds
    short: bool = False  # KNN asked for more objects than the tree holds


class SnapshotError(ValueError):
    pass


_MAGIC = b"RLRTREE\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIqqq")


class RTree:
    def __init__(self, dims: int = 2, M: int = 50, m: int = 20, capacity: int = 64):
        if dims < 1:
            raise ValueError("dims must be positive")
        if not 1 <= m <= M // 2:
            raise ValueError(f"need 1 <= m <= M/2, got m={m}, M={M}")
        self.dims = dims
        self.M = M
        self.m = m
        self.access_counter = 0
        self._alloc(max(capacity, 8))
        self._meta = np.array([0, 1, 0], dtype=np.int64)
        self._lvl[0] = 0
        self._cnt[0] = 0
        self._par[0] = -1

    def _alloc(self, cap: int) -> None:
        d, slots = self.dims, self.M + 1
        self._lo = np.zeros((cap, slots, d))
        self._hi = np.zeros((cap, slots, d))
        self._ref = np.zeros((cap, slots), dtype=np.int64)
        self._cnt = np.zeros(cap, dtype=np.int64)
        self._lvl = np.zeros(cap, dtype=np.int64)
        self._par = np.full(cap, -1, dtype=np.int64)

    def _grow(self, needed: int) -> None:
        cap = self._cnt.shape[0]
        if needed <= cap:
            return
        new_cap = max(needed, cap * 2)
        old = (self._lo, self._hi, self._ref, self._cnt, self._lvl, self._par)
        n = self.node_count
        self._alloc(new_cap)
        for dst, src in zip((self._lo, self._hi, self._ref, self._cnt, self._lvl, self._par), old):
            dst[:n] = src[:n]

    def _arrays(self):
        return self._lo, self._hi, self._ref, self._cnt, self._lvl, self._par, self._meta

    # -- shape -------------------------------------------------------------

    @property
    def root(self) -> int:
        return int(self._meta[K.ROOT])

    @property
    def node_count(self) -> int:
        return int(self._meta[K.NNODES])

    def __len__(self) -> int:
        return int(self._meta[K.NOBJ])

    @property
    def height(self) -> int:
        """Levels from root to leaf, both included."""
        return int(self._lvl[self.root]) + 1

    def level(self, node: int) -> int:
        return int(self._lvl[node])

    def parent(self, node: int) -> int | None:
        p = int(self._par[node])
        return None if p < 0 else p

    def entries(self, node: int) -> list[tuple[int, Rect]]:
        """(child handle or object id, rectangle) pairs of a node."""
        n = int(self._cnt[node])
        return [
            (int(self._ref[node, i]), Rect(tuple(self._lo[node, i]), tuple(self._hi[node, i])))
            for i in range(n)
        ]

    def entry_arrays(self, node: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = int(self._cnt[node])
        return self._lo[node, :n], self._hi[node, :n], self._ref[node, :n]

    def bounds(self) -> Rect | None:
        lo, hi, _ = self.entry_arrays(self.root)
        if len(lo) == 0:
            return None
        return Rect(tuple(lo.min(axis=0)), tuple(hi.max(axis=0)))

    # -- insertion ---------------------------------------------------------

    def _reserve(self) -> None:
        # an insert creates at most height + 1 nodes
        self._grow(self.node_count + self.height + 3)

    def insert(self, obj: ObjectRecord, policy: InsertPolicy | Policy = REFERENCE) -> None:
        if obj.mbr.dims != self.dims:
            raise DimensionMismatch(f"{obj.mbr.dims}-d object in a {self.dims}-d tree")
        self._reserve()
        olo, ohi = obj.mbr.as_arrays()
        if isinstance(policy, Policy):
            crule, srule, k, cs, sp = policy.kernel_args()
            K.insert_one(*self._arrays(), olo, ohi, obj.id, self.M, self.m, crule, srule, k, cs, sp)
            return
        lo, hi, ref, cnt, lvl, par, meta = self._arrays()
        node = self.root
        while lvl[node] > 0:
            i = int(policy.choose_subtree(self, node, obj))
            if not 0 <= i < cnt[node]:
                raise IndexError(f"policy chose entry {i} of a node with {cnt[node]} entries")
            K.enlarge_entry(lo, hi, node, i, olo, ohi)
            node = int(ref[node, i])
        K.add_entry(lo, hi, ref, cnt, node, olo, ohi, obj.id)
        meta[K.NOBJ] += 1
        while node >= 0 and cnt[node] > self.M:
            mask = np.asarray(policy.split(self, node), dtype=np.bool_)
            n1 = int(mask.sum())
            if mask.shape != (cnt[node],) or not self.m <= n1 <= self.M + 1 - self.m:
                raise ValueError(f"split produced groups of {n1} and {cnt[node] - n1} entries")
            node = int(K.apply_split(lo, hi, ref, cnt, lvl, par, meta, node, mask))

    def insert_many(self, data: Dataset, policy: Policy = REFERENCE) -> None:
        """Insert every object of ``data`` in order."""
        if data.dims != self.dims:
            raise DimensionMismatch(f"{data.dims}-d data in a {self.dims}-d tree")
        if not isinstance(policy, Policy):
            for rec in data:
                self.insert(rec, policy)
            return
        crule, srule, k, cs, sp = policy.kernel_args()
        start, n = 0, len(data)
        while start < n:
            # roughly one new leaf per m objects
            self._grow(self.node_count + (n - start) // self.m + 2 * self.height + 8)
            start = K.insert_many(
                *self._arrays(), data.lo, data.hi, data.ids, start, self.M, self.m, crule, srule, k, cs, sp
            )

    # -- queries -----------------------------------------------------------

    def range_query(self, window: Rect) -> tuple[set[int], QueryStats]:
        if window.dims != self.dims:
            raise DimensionMismatch(f"{window.dims}-d window on a {self.dims}-d tree")
        ids, stats = self.range_query_array(*window.as_arrays())
        return set(ids.tolist()), stats

    def range_query_array(self, qlo: np.ndarray, qhi: np.ndarray) -> tuple[np.ndarray, QueryStats]:
        out = np.empty(max(len(self), 1), dtype=np.int64)
        stack = np.empty(self.node_count + 1, dtype=np.int64)
        t0 = time.perf_counter_ns()
        acc, found = K.range_query(self._lo, self._hi, self._ref, self._cnt, self._lvl, self.root, qlo, qhi, out, stack)
        elapsed = time.perf_counter_ns() - t0
        self.access_counter += acc
        return out[:found], QueryStats(int(acc), int(found), elapsed)

    def count_accesses(self, qlo: np.ndarray, qhi: np.ndarray) -> np.ndarray:
        """Node accesses for a batch of windows, shapes ``(q, d)``."""
        qlo = np.ascontiguousarray(qlo, dtype=np.float64)
        qhi = np.ascontiguousarray(qhi, dtype=np.float64)
        out = np.empty(qlo.shape[0], dtype=np.int64)
        K.range_accesses(self._lo, self._hi, self._ref, self._cnt, self._lvl, self.root, qlo, qhi, out)
        self.access_counter += int(out.sum())
        return out

    def knn_query(self, q: Sequence[float], k: int) -> tuple[list[int], QueryStats]:
        """The ``k`` objects nearest to point ``q`` by MBR distance, nearest first.

        Ties on distance are ordered by ascending id. Asking for more objects
        than the tree holds returns them all with ``stats.short`` set.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dims,):
            raise DimensionMismatch(f"{q.shape[0]}-d point on a {self.dims}-d tree")
        kk = min(k, max(len(self), 1))
        best_d = np.empty(kk)
        best_id = np.empty(kk, dtype=np.int64)
        depth = self.height * (self.M + 1) + 1
        stack_node = np.empty(depth, dtype=np.int64)
        stack_d = np.empty(depth)
        t0 = time.perf_counter_ns()
        acc, found = K.knn_query(
            self._lo, self._hi, self._ref, self._cnt, self._lvl, self.root, q, kk, best_d, best_id, stack_node, stack_d
        )
        elapsed = time.perf_counter_ns() - t0
        self.access_counter += acc
        return best_id[:found].tolist(), QueryStats(int(acc), int(found), elapsed, short=k > len(self))

    # -- copies and checks -------------------------------------------------

    def clone(self) -> RTree:
        other = RTree.__new__(RTree)
        other.dims, other.M, other.m = self.dims, self.M, self.m
        other.access_counter = 0
        n = self.node_count
        other._alloc(max(self._cnt.shape[0], 8))
        other._meta = self._meta.copy()
        for dst, src in zip(other._arrays()[:-1], self._arrays()[:-1]):
            dst[:n] = src[:n]
        return other

    def copy_from(self, src: RTree) -> None:
        """Make this tree a structural copy of ``src``, reusing buffers where possible."""
        if (src.dims, src.M, src.m) != (self.dims, self.M, self.m):
            raise ValueError("trees differ in dims or capacities")
        n = src.node_count
        if self._cnt.shape[0] < n:
            self._alloc(src._cnt.shape[0])
        for dst, s in zip(self._arrays()[:-1], src._arrays()[:-1]):
            dst[:n] = s[:n]
        self._meta[:] = src._meta

    def same_structure(self, other: RTree) -> bool:
        if (self.dims, self.M, self.m) != (other.dims, other.M, other.m):
            return False
        if not np.array_equal(self._meta, other._meta):
            return False
        n = self.node_count
        if not (
            np.array_equal(self._cnt[:n], other._cnt[:n])
            and np.array_equal(self._lvl[:n], other._lvl[:n])
            and np.array_equal(self._par[:n], other._par[:n])
        ):
            return False
        for node in range(n):
            c = self._cnt[node]
            if not (
                np.array_equal(self._ref[node, :c], other._ref[node, :c])
                and np.array_equal(self._lo[node, :c], other._lo[node, :c])
                and np.array_equal(self._hi[node, :c], other._hi[node, :c])
            ):
                return False
        return True

    def object_ids(self) -> np.ndarray:
        n = self.node_count
        leaves = np.nonzero(self._lvl[:n] == 0)[0]
        return np.concatenate([self._ref[v, : self._cnt[v]] for v in leaves]) if len(leaves) else np.empty(0, np.int64)

    def validate(self) -> list[str]:
        """Invariant violations, one message each; empty when the tree is sound."""
        out: list[str] = []
        lo, hi, ref, cnt, lvl, par, meta = self._arrays()
        root = self.root
        n_nodes = self.node_count
        if par[root] != -1:
            out.append(f"root {root} has parent {par[root]}")
        seen = np.zeros(n_nodes, dtype=bool)
        objects = []
        stack = [root]
        while stack:
            v = stack.pop()
            if seen[v]:
                out.append(f"node {v} reachable twice")
                continue
            seen[v] = True
            c = int(cnt[v])
            if v == root:
                low = 2 if lvl[v] > 0 else (1 if len(self) else 0)
                if not low <= c <= self.M:
                    out.append(f"fill: root {v} holds {c} entries")
            elif not self.m <= c <= self.M:
                out.append(f"fill: node {v} holds {c} entries, bounds [{self.m}, {self.M}]")
            elo, ehi = lo[v, :c], hi[v, :c]
            if np.any(elo > ehi):
                out.append(f"inverted rect in node {v}")
            if lvl[v] == 0:
                objects.append(ref[v, :c])
                continue
            for i in range(c):
                child = int(ref[v, i])
                if not 0 <= child < n_nodes:
                    out.append(f"node {v} entry {i} points to invalid handle {child}")
                    continue
                if lvl[child] != lvl[v] - 1:
                    out.append(f"level: child {child} at {lvl[child]} under node {v} at {lvl[v]}")
                if par[child] != v:
                    out.append(f"parent link: child {child} records {par[child]}, expected {v}")
                cc = int(cnt[child])
                if cc == 0:
                    out.append(f"empty non-root node {child}")
                    continue
                tlo = lo[child, :cc].min(axis=0)
                thi = hi[child, :cc].max(axis=0)
                if np.array_equal(tlo, elo[i]) and np.array_equal(thi, ehi[i]):
                    pass
                elif np.all(elo[i] <= tlo) and np.all(thi <= ehi[i]):
                    out.append(f"loose MBR: node {v} entry {i} (child {child})")
                else:
                    out.append(f"MBR does not cover child: node {v} entry {i} (child {child})")
                stack.append(child)
        unreached = n_nodes - int(seen.sum())
        if unreached:
            out.append(f"{unreached} nodes unreachable from the root")
        ids = np.concatenate(objects) if objects else np.empty(0, np.int64)
        if len(ids) != len(self):
            out.append(f"object count: leaves hold {len(ids)}, tree records {len(self)}")
        if len(np.unique(ids)) != len(ids):
            out.append("duplicate object ids in leaves")
        return out

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        n = self.node_count
        header = _HEADER.pack(_MAGIC, _VERSION, self.M, self.m, self.dims, n, self.root, len(self))
        body = b"".join(
            np.ascontiguousarray(a[:n]).tobytes()
            for a in (self._lo, self._hi, self._ref, self._cnt, self._lvl, self._par)
        )
        digest = hashlib.sha256(header + body).digest()
        return header + body + digest

    @classmethod
    def from_bytes(cls, blob: bytes) -> RTree:
        if len(blob) < _HEADER.size + 32:
            raise SnapshotError("snapshot truncated")
        payload, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(payload).digest() != digest:
            raise SnapshotError("snapshot checksum mismatch")
        magic, version, M, m, dims, n, root, nobj = _HEADER.unpack_from(payload)
        if magic != _MAGIC:
            raise SnapshotError("not an index snapshot")
        if version != _VERSION:
            raise SnapshotError(f"unsupported snapshot version {version}")
        tree = cls(dims, M, m, capacity=max(n, 8))
        off = _HEADER.size
        for arr in (tree._lo, tree._hi, tree._ref, tree._cnt, tree._lvl, tree._par):
            size = arr[:n].nbytes
            arr[:n] = np.frombuffer(payload, dtype=arr.dtype, count=arr[:n].size, offset=off).reshape(arr[:n].shape)
            off += size
        if off != len(payload):
            raise SnapshotError("snapshot length does not match its header")
        tree._meta[:] = (root, n, nobj)
        return tree

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> RTree:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def clone_structure(src: RTree) -> RTree:
    return src.clone()


def build_tree(data: Dataset, policy: Policy = REFERENCE, M: int = 50, m: int = 20) -> RTree:
    tree = RTree(data.dims, M, m, capacity=max(16, 2 * len(data) // max(m, 1)))
    tree.insert_many(data, policy)
    return tree
