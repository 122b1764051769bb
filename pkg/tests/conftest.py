import numpy as np
import pytest
from hypothesis import settings

from csbm_match.graph import CommunityPartition, Graph

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_graph(n, p, rng):
    """Dense Bernoulli(p) graph; independent of Graph.from_edges internals."""
    m = np.triu(rng.random((n, n)) < p, 1)
    return np.argwhere(m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_graph(rng):
    n = 20
    edges = random_graph(n, 0.3, rng)
    labels = rng.integers(0, 3, size=n)
    return Graph.from_edges(n, edges), edges, labels


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
