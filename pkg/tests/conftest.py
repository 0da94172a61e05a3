import numpy as np
import pytest

from rlrtree import Dataset
from rlrtree.geometry import Rect


def random_boxes(rng, n, dims=2, max_side=0.05):
    lo = rng.random((n, dims))
    hi = lo + rng.random((n, dims)) * max_side
    return lo, hi


def random_dataset(rng, n, dims=2, max_side=0.01):
    lo, hi = random_boxes(rng, n, dims, max_side)
    return Dataset(np.arange(n), lo, hi)


def rects_from(lo, hi):
    return [Rect(tuple(a), tuple(b)) for a, b in zip(lo, hi)]


def brute_range(data, qlo, qhi):
    """Ids of objects whose boxes meet the closed window."""
    hit = np.all((data.lo <= qhi) & (qlo <= data.hi), axis=1)
    return set(data.ids[hit].tolist())


def brute_knn(data, q, k):
    d = np.maximum(0.0, np.maximum(data.lo - q, q - data.hi))
    dist = np.sum(d * d, axis=1)
    order = np.lexsort((data.ids, dist))
    return data.ids[order[:k]].tolist()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (passed, detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'} - {detail}")
