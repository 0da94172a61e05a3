"""Lockstep query benchmarks over several indices and the split-ranking experiment.

Every index answers every query; answers must agree exactly, which doubles as
a correctness firewall. Relative I/O is the per-query ratio of node accesses
to the baseline's, averaged over the queries of a set.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .dataset import Dataset
from .policy import Policy
from .rtree import RTree, build_tree


class ResultMismatch(RuntimeError):
    """Two indices returned different answers for the same query."""


@dataclass
class BenchReport:
    """Per-query rows plus ``summary[index][query_set] = mean relative I/O``."""

    baseline: str
    kind: str
    rows: list[dict] = field(default_factory=list)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    FIELDS = ("query_set", "qid", "index", "node_accesses", "result_count", "elapsed_ns", "relative_io")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS, lineterminator="\n")
            w.writeheader()
            for row in self.rows:
                w.writerow(row)

    def to_json(self) -> dict:
        return {"kind": self.kind, "baseline": self.baseline, "summary": self.summary, "metadata": self.metadata}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def mean_relative_io(self, index: str, query_set: str | None = None) -> float:
        sets = self.summary[index]
        if query_set is None:
            if len(sets) != 1:
                raise KeyError(f"{index} has several query sets: {sorted(sets)}")
            return next(iter(sets.values()))
        return sets[query_set]


def _check_indices(indices: Mapping[str, RTree], baseline: str) -> None:
    if baseline not in indices:
        raise ValueError(f"baseline {baseline!r} is not among the indices {sorted(indices)}")
    dims = {t.dims for t in indices.values()}
    sizes = {len(t) for t in indices.values()}
    if len(dims) != 1 or len(sizes) != 1:
        raise ValueError("indices must hold the same objects")


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _label(x) -> str:
    return x if isinstance(x, str) else repr(float(x))


def run_range_bench(
    indices: Mapping[str, RTree],
    queries,
    baseline: str,
    *,
    threads: int = 1,
    metadata: dict | None = None,
) -> BenchReport:
    """Range queries over every index.

    ``queries`` is ``(lo, hi)`` or a mapping from a query-set label (for
    example the size fraction) to ``(lo, hi)``.
    """
    _check_indices(indices, baseline)
    sets = queries if isinstance(queries, Mapping) else {"all": queries}
    names = list(indices)
    report = BenchReport(baseline, "range", metadata=dict(metadata or {}))
    for label, (qlo, qhi) in sets.items():
        label = _label(label)
        qlo = np.ascontiguousarray(qlo, dtype=np.float64)
        qhi = np.ascontiguousarray(qhi, dtype=np.float64)

        def one(i):
            out = {}
            for name in names:
                ids, st = indices[name].range_query_array(qlo[i], qhi[i])
                out[name] = (np.sort(ids), st)
            return out

        per_query = _map(one, range(len(qlo)), threads)
        ratios = {name: [] for name in names}
        for qid, res in enumerate(per_query):
            ref_ids, ref_st = res[baseline]
            for name in names:
                ids, st = res[name]
                if not np.array_equal(ids, ref_ids):
                    raise ResultMismatch(f"query set {label}, query {qid}: {name} disagrees with {baseline}")
                rel = st.node_accesses / ref_st.node_accesses
                ratios[name].append(rel)
                report.rows.append(
                    {
                        "query_set": label,
                        "qid": qid,
                        "index": name,
                        "node_accesses": st.node_accesses,
                        "result_count": st.result_count,
                        "elapsed_ns": st.elapsed,
                        "relative_io": rel,
                    }
                )
        for name in names:
            report.summary.setdefault(name, {})[label] = float(np.mean(ratios[name]))
    return report


def knn_groups(points: np.ndarray, kcol: np.ndarray) -> dict[int, np.ndarray]:
    """Group workload rows ``(point, K)`` by K."""
    points = np.asarray(points, dtype=np.float64)
    kcol = np.asarray(kcol, dtype=np.int64)
    return {int(k): points[kcol == k] for k in np.unique(kcol)}


def run_knn_bench(
    indices: Mapping[str, RTree],
    workload,
    baseline: str,
    ks=(1,),
    *,
    threads: int = 1,
    metadata: dict | None = None,
) -> BenchReport:
    """KNN queries, summarised per K under the label ``K=<k>``.

    ``workload`` is either an array of points asked once per value in
    ``ks``, or a mapping ``{K: points}`` (see :func:`knn_groups`).
    """
    _check_indices(indices, baseline)
    if isinstance(workload, Mapping):
        groups = {int(k): np.asarray(v, dtype=np.float64) for k, v in workload.items()}
    else:
        pts = np.asarray(workload, dtype=np.float64)
        groups = {int(k): pts for k in ks}
    names = list(indices)
    report = BenchReport(baseline, "knn", metadata=dict(metadata or {}))
    for k, pts in groups.items():
        label = f"K={k}"

        def one(i):
            return {name: indices[name].knn_query(pts[i], k) for name in names}

        per_query = _map(one, range(len(pts)), threads)
        ratios = {name: [] for name in names}
        for qid, res in enumerate(per_query):
            ref_ids, ref_st = res[baseline]
            for name in names:
                ids, st = res[name]
                if ids != ref_ids:
                    raise ResultMismatch(f"{label}, point {qid}: {name} disagrees with {baseline}")
                rel = st.node_accesses / ref_st.node_accesses
                ratios[name].append(rel)
                report.rows.append(
                    {
                        "query_set": label,
                        "qid": qid,
                        "index": name,
                        "node_accesses": st.node_accesses,
                        "result_count": st.result_count,
                        "elapsed_ns": st.elapsed,
                        "relative_io": rel,
                    }
                )
        for name in names:
            report.summary.setdefault(name, {})[label] = float(np.mean(ratios[name]))
    return report


@dataclass
class RankingResult:
    best_fraction: dict[str, float]
    queries: int
    single_winner: bool  # some variant is best (possibly tied) on every query

    def winners(self, threshold: float) -> list[str]:
        return [k for k, v in self.best_fraction.items() if v >= threshold]


RANKING_VARIANTS = {
    "linear": Policy("min-area-enlargement", "linear"),
    "quadratic": Policy("min-area-enlargement", "quadratic"),
    "greene": Policy("min-area-enlargement", "greene"),
    "rstar-topology": Policy("min-area-enlargement", "rstar-topology"),
}


def rank_accesses(accesses: Mapping[str, np.ndarray]) -> RankingResult:
    """Fraction of queries on which each variant has the fewest accesses (ties share the win)."""
    names = list(accesses)
    table = np.stack([np.asarray(accesses[n]) for n in names])
    best = table == table.min(axis=0)
    frac = best.mean(axis=1)
    return RankingResult({n: float(f) for n, f in zip(names, frac)}, table.shape[1], bool(np.any(frac == 1.0)))


def ranking_experiment(data: Dataset | Mapping[str, RTree], queries, variants=None, M: int = 50, m: int = 20):
    """Build one tree per split variant (common ChooseSubtree) and rank them per query.

    ``data`` may instead be a mapping of already built trees.
    """
    if isinstance(data, Mapping):
        trees = dict(data)
    else:
        variants = variants or RANKING_VARIANTS
        trees = {name: build_tree(data, pol, M, m) for name, pol in variants.items()}
    qlo, qhi = queries
    return rank_accesses({name: t.count_accesses(qlo, qhi) for name, t in trees.items()})
