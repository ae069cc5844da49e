import numpy as np
import pytest

from tieredann.config import IndexConfig
from tieredann.harness.datasets import gaussian_mixture
from tieredann.index import TieredIndex


@pytest.fixture(scope="session")
def small_data():
    """2,100 points in 16-d: 2,000 base vectors plus 100 queries."""
    x = gaussian_mixture(2100, 16, seed=11)
    return x[:2000], x[2000:]


@pytest.fixture
def small_index(small_data):
    base, _ = small_data
    return TieredIndex.build(base[:1000], IndexConfig(R=16, L_search=64),
                             hot_capacity=200)


def brute_knn(base_by_id, live, q, k):
    """Reference linear scan: squared L2, ties to the lower id."""
    live = sorted(live)
    d = [(float(((base_by_id[h].astype(np.float64) - q) ** 2).sum()), h) for h in live]
    d.sort()
    return [h for _, h in d[:k]]


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
