import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from compass import CompassIndex, Dataset, gaussian_mixture, generate_attributes

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_data():
    """600 base vectors in 8-d, 40 held-out queries, three uniform attributes."""
    x = gaussian_mixture(640, 8, n_components=6, spread=1.0, seed=3)
    base, queries = x[:600], x[600:]
    return Dataset(base, generate_attributes(600, 3, seed=4)), queries


@pytest.fixture(scope="session")
def small_index(small_data):
    ds, _ = small_data
    return CompassIndex.build(ds, M=8, efc=64, nlist=12, seed=0)


def hand_graph(adjacency, vectors, M=16, entry=0):
    """Single-layer graph from an explicit (directed) adjacency list."""
    from compass.graph import GraphIndex, GraphLayer

    n = len(adjacency)
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(a) for a in adjacency])
    nbrs = np.array([v for a in adjacency for v in a], dtype=np.int64)
    layer = GraphLayer(np.arange(n, dtype=np.int64), offsets, nbrs)
    return GraphIndex([layer], M, entry, vectors=np.ascontiguousarray(vectors, dtype=np.float64))


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts (and ablation curves) when that module ran."""
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 12):
        tr.write_line(mod.VERDICTS.get(n, f"criterion {n:>2} NOT RUN"))
    if mod.CURVE_LINES:
        tr.section("ablation curves, 1-attribute 30% workload")
        for line in mod.CURVE_LINES:
            tr.write_line(line)
