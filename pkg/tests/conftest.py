import numpy as np
import pytest

from stochmatch import graph


@pytest.fixture
def k22():
    return graph.TypeGraph.from_edges(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)])


@pytest.fixture
def single_edge():
    return graph.TypeGraph.from_edges(1, 1, [(0, 0)], [1.0])


def small_instances(n, max_types=8, max_offline=8, rate_range=(0.5, 2.0), weighted=False, seed=0):
    """Deterministic family of random type graphs used across test modules."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        ni = int(rng.integers(2, max_types + 1))
        nj = int(rng.integers(2, max_offline + 1))
        out.append(graph.random_type_graph(ni, nj, float(rng.uniform(0.25, 0.7)), rate_range,
                                           (0.5, 3.0) if weighted else None,
                                           seed=int(rng.integers(2**31))))
    return out


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
