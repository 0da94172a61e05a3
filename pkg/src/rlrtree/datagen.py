"""Synthetic datasets, point-file ingestion and query workloads.

Object centres lie in the unit hypercube and every object is a small cube of
fixed side. Test queries come from a seed stream that is kept separate from
training queries by mixing a domain tag into the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import DataError, Dataset, parse_numeric, read_rows
from .trainer import query_windows

DISTRIBUTIONS = ("uniform", "gaussian", "skew")
QUERY_SIZES = (0.00005, 0.0001, 0.0005, 0.001, 0.005, 0.01, 0.02)
KNN_KS = (1, 5, 25, 125, 625)

# seed-domain tags keep independent streams apart under one master seed
_DOMAIN_DATA = 0
_DOMAIN_TEST_QUERIES = 1
_DOMAIN_KNN = 2


def _rng(seed: int, domain: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), domain, *map(int, extra)]))


@dataclass(frozen=True)
class DataGenConfig:
    distribution: str = "uniform"
    n: int = 100_000
    dims: int = 2
    object_side: float = 1e-4
    skew_c: float = 9.0
    gauss_mu: float = 0.5
    gauss_sigma: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}; expected one of {DISTRIBUTIONS}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.dims < 1:
            raise ValueError("dims must be at least 1")
        if self.distribution == "skew" and self.dims != 2:
            raise ValueError("the skew distribution is two-dimensional")
        if not self.object_side >= 0.0:
            raise ValueError("object_side must be non-negative")
        if self.gauss_sigma <= 0.0 or self.skew_c <= 0.0:
            raise ValueError("gauss_sigma and skew_c must be positive")


def _truncated_normal(rng, mu, sigma, shape) -> np.ndarray:
    out = rng.normal(mu, sigma, shape)
    bad = (out < 0.0) | (out > 1.0)
    while bad.any():
        out[bad] = rng.normal(mu, sigma, int(bad.sum()))
        bad = (out < 0.0) | (out > 1.0)
    return out


def gen_centers(cfg: DataGenConfig) -> np.ndarray:
    rng = _rng(cfg.seed, _DOMAIN_DATA)
    shape = (cfg.n, cfg.dims)
    if cfg.distribution == "gaussian":
        return _truncated_normal(rng, cfg.gauss_mu, cfg.gauss_sigma, shape)
    c = rng.random(shape)
    if cfg.distribution == "skew":
        c[:, 1] = c[:, 1] ** cfg.skew_c
    return c


def gen_dataset(cfg: DataGenConfig) -> Dataset:
    c = gen_centers(cfg)
    half = cfg.object_side / 2.0
    return Dataset(np.arange(cfg.n, dtype=np.int64), c - half, c + half)


def ingest_points_csv(path) -> Dataset:
    """Read ``id, x_1..x_d`` points and rescale each axis to [0, 1].

    The applied offsets and extents are kept in ``Dataset.scale``.
    """
    rows, offset = read_rows(path)
    table = parse_numeric(rows, offset)
    if table.shape[1] < 2:
        raise DataError(f"{path}: expected an id and at least one coordinate")
    ids = table[:, 0]
    if np.any(ids != np.round(ids)):
        raise DataError(f"{path}: ids must be integers")
    if len(np.unique(ids)) != len(ids):
        raise DataError(f"{path}: duplicate object ids")
    pts = table[:, 1:]
    if not np.all(np.isfinite(pts)):
        raise DataError(f"{path}: non-finite coordinate")
    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    safe = np.where(extent > 0.0, extent, 1.0)
    scaled = (pts - lo) / safe
    data = Dataset.from_points(scaled, ids.astype(np.int64))
    data.scale = {"offset": lo.tolist(), "extent": extent.tolist()}
    return data


def gen_test_queries(count: int, size_fraction: float, dims: int = 2, seed: int = 0, ratio_range=(0.1, 10.0)):
    """Windows of exact volume ``size_fraction`` with centres uniform in the unit cube.

    Returns ``(lo, hi)`` arrays of shape (count, dims).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if not size_fraction > 0.0:
        raise ValueError("size_fraction must be positive")
    rng = _rng(seed, _DOMAIN_TEST_QUERIES, round(size_fraction * 1e9))
    centers = rng.random((count, dims))
    return query_windows(centers, size_fraction, ratio_range, rng)


def gen_knn_workload(count: int, dims: int = 2, seed: int = 0) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be at least 1")
    return _rng(seed, _DOMAIN_KNN).random((count, dims))


# -- files -------------------------------------------------------------------


def write_queries(path, qlo: np.ndarray, qhi: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i in range(len(qlo)):
            w.writerow([i] + [repr(float(v)) for v in qlo[i]] + [repr(float(v)) for v in qhi[i]])


def read_queries(path) -> tuple[np.ndarray, np.ndarray]:
    rows, offset = read_rows(path)
    table = parse_numeric(rows, offset)
    if table.shape[1] < 3 or (table.shape[1] - 1) % 2:
        raise DataError(f"{path}: expected qid plus 2*d coordinates")
    d = (table.shape[1] - 1) // 2
    qlo, qhi = table[:, 1 : 1 + d].copy(), table[:, 1 + d :].copy()
    if np.any(qlo > qhi):
        raise DataError(f"{path}: query with lower corner above upper corner")
    return qlo, qhi


def write_knn(path, points: np.ndarray, ks) -> None:
    """One row per (point, K) pair: ``qid, x_1..x_d, K``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        qid = 0
        for k in ks:
            for p in points:
                w.writerow([qid] + [repr(float(v)) for v in p] + [int(k)])
                qid += 1


def read_knn(path) -> tuple[np.ndarray, np.ndarray]:
    rows, offset = read_rows(path)
    table = parse_numeric(rows, offset)
    if table.shape[1] < 3:
        raise DataError(f"{path}: expected qid, coordinates and K")
    ks = table[:, -1]
    if np.any(ks < 1) or np.any(ks != np.round(ks)):
        raise DataError(f"{path}: K must be a positive integer")
    return table[:, 1:-1].copy(), ks.astype(np.int64)
