"""Object collections and the CSV dataset format.

A dataset file has one record per line: ``id, lo_1..lo_d, hi_1..hi_d``.
Points repeat their coordinates (lo == hi). A header line is optional and is
recognised by a non-numeric first field.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .geometry import Rect


class DataError(ValueError):
    """Malformed input data; carries the offending line number when known."""


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    mbr: Rect


@dataclass
class Dataset:
    """Columnar object storage: ids ``(n,)``, lower and upper corners ``(n, d)``.

    Indexing yields :class:`ObjectRecord` values, so a dataset can be used
    wherever a list of records is expected.
    """

    ids: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    scale: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        self.lo = np.ascontiguousarray(self.lo, dtype=np.float64)
        self.hi = np.ascontiguousarray(self.hi, dtype=np.float64)
        if self.lo.ndim != 2 or self.lo.shape != self.hi.shape:
            raise DataError(f"corner arrays must be (n, d) and equal: {self.lo.shape} vs {self.hi.shape}")
        if self.ids.shape != (self.lo.shape[0],):
            raise DataError("one id per object required")
        if np.any(self.lo > self.hi):
            raise DataError("lower corner exceeds upper corner")

    @classmethod
    def from_records(cls, records) -> Dataset:
        records = list(records)
        if not records:
            raise DataError("empty record list")
        return cls(
            np.array([r.id for r in records]),
            np.array([r.mbr.lo for r in records]),
            np.array([r.mbr.hi for r in records]),
        )

    @classmethod
    def from_points(cls, points, ids=None) -> Dataset:
        points = np.asarray(points, dtype=np.float64)
        if ids is None:
            ids = np.arange(len(points))
        return cls(ids, points, points.copy())

    @property
    def dims(self) -> int:
        return self.lo.shape[1]

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Dataset(self.ids[i], self.lo[i], self.hi[i], self.scale)
        return ObjectRecord(int(self.ids[i]), Rect(tuple(self.lo[i]), tuple(self.hi[i])))

    def __iter__(self) -> Iterator[ObjectRecord]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices) -> Dataset:
        return Dataset(self.ids[indices], self.lo[indices], self.hi[indices], self.scale)

    def centers(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def concat(self, other: Dataset) -> Dataset:
        return Dataset(
            np.concatenate([self.ids, other.ids]),
            np.vstack([self.lo, other.lo]),
            np.vstack([self.hi, other.hi]),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.ids, self.lo, self.hi):
            h.update(arr.tobytes())
        return h.hexdigest()


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_rows(path) -> tuple[list[list[str]], int]:
    """Rows of a CSV file with a leading header dropped; returns the line offset."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    offset = 1
    if rows and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
        offset = 2
    return rows, offset


def parse_numeric(rows, offset: int, ncols: int | None = None) -> np.ndarray:
    if not rows:
        raise DataError("no data rows")
    width = ncols or len(rows[0])
    out = np.empty((len(rows), width))
    for n, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"line {n + offset}: expected {width} fields, got {len(row)}")
        try:
            out[n] = [float(cell) for cell in row]
        except ValueError as exc:
            raise DataError(f"line {n + offset}: non-numeric field ({exc})") from None
    return out


def read_dataset(path) -> Dataset:
    rows, offset = read_rows(path)
    table = parse_numeric(rows, offset)
    if table.shape[1] < 3 or (table.shape[1] - 1) % 2:
        raise DataError(f"{path}: expected id plus 2*d coordinates, got {table.shape[1]} columns")
    d = (table.shape[1] - 1) // 2
    ids = table[:, 0]
    if np.any(ids != np.round(ids)):
        raise DataError(f"{path}: ids must be integers")
    if len(np.unique(ids)) != len(ids):
        raise DataError(f"{path}: duplicate object ids")
    try:
        return Dataset(ids.astype(np.int64), table[:, 1 : 1 + d], table[:, 1 + d :])
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_dataset(path, data: Dataset, header: bool = False) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            d = data.dims
            w.writerow(["id"] + [f"lo_{i + 1}" for i in range(d)] + [f"hi_{i + 1}" for i in range(d)])
        for i in range(len(data)):
            w.writerow([int(data.ids[i])] + [repr(float(v)) for v in data.lo[i]] + [repr(float(v)) for v in data.hi[i]])
