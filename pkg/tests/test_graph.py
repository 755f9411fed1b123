import heapq
from collections import deque

import numpy as np
import pytest
from conftest import hand_graph
from hypothesis import given, settings
from hypothesis import strategies as st

from compass.core import ALWAYS_TRUE, And, Range, sq_dists
from compass.graph import (
    CandidateHeap,
    GraphSearchState,
    SearchCounters,
    build_graph,
    graph_open,
    neighborhood_passrate,
    search_unfiltered,
    select_entry_point,
)


def _exact_knn(x, q, k):
    d = sq_dists(x, np.arange(len(x)), q)
    return np.lexsort((np.arange(len(x)), d))[:k]


# --- construction -----------------------------------------------------------------


def test_single_record():
    g = build_graph(np.array([[1.0, 2.0]]), M=4, efc=8)
    assert g.n == 1 and g.entry_node == 0
    assert g.neighbors(0).size == 0


def test_three_points_complete():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    g = build_graph(x, M=2, efc=4, seed=0)
    for v in range(3):
        assert sorted(g.neighbors(v).tolist()) == [u for u in range(3) if u != v]


def test_build_errors():
    with pytest.raises(ValueError):
        build_graph(np.empty((0, 3)))
    with pytest.raises(ValueError):
        build_graph(np.zeros((5, 2)), M=1)
    with pytest.raises(ValueError):
        build_graph(np.zeros((5, 2)), M=8, efc=4)


@pytest.fixture(scope="module")
def g2k():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2000, 12))
    return x, build_graph(x, M=8, efc=64, seed=1)


def test_structure_invariants(g2k):
    x, g = g2k
    assert g.degree_ok()
    assert np.array_equal(g.layers[0].nodes, np.arange(len(x)))
    for layer in g.layers:
        members = set(layer.nodes.tolist())
        for v in layer.nodes.tolist():
            nb = layer.neighbors_of(v).tolist()
            assert v not in nb
            assert len(set(nb)) == len(nb)
            assert set(nb) <= members
    # upper layers are nested
    for lo, hi in zip(g.layers, g.layers[1:]):
        assert set(hi.nodes.tolist()) <= set(lo.nodes.tolist())
    assert g.entry_node in set(g.layers[-1].nodes.tolist())


def test_layer0_reachable_from_entry(g2k):
    x, g = g2k
    seen = np.zeros(len(x), dtype=bool)
    seen[g.entry_node] = True
    todo = deque([g.entry_node])
    while todo:
        for u in g.neighbors(todo.popleft()).tolist():
            if not seen[u]:
                seen[u] = True
                todo.append(u)
    assert seen.all()


def test_deterministic_for_seed(g2k):
    x, g = g2k
    h = build_graph(x, M=8, efc=64, seed=1)
    assert h.entry_node == g.entry_node and len(h.layers) == len(g.layers)
    for a, b in zip(g.layers, h.layers):
        assert np.array_equal(a.offsets, b.offsets) and np.array_equal(a.neighbors, b.neighbors)


def test_unfiltered_recall_10k():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((10_000, 32))
    qs = rng.standard_normal((50, 32))
    g = build_graph(x, M=16, efc=200, seed=0)
    hits = 0
    for q in qs:
        got, comps = search_unfiltered(g, q, ef=100, k=10)
        assert comps <= len(x)
        hits += len({r.record_id for r in got} & set(_exact_knn(x, q, 10).tolist()))
    assert hits / (10 * len(qs)) >= 0.95


# --- routing ------------------------------------------------------------------------


def test_entry_point_single_layer():
    g = hand_graph([[1], [0]], np.array([[0.0], [1.0]]), entry=1)
    assert select_entry_point(g, np.array([0.0])) == 1


def test_entry_point_descent_never_worse(g2k):
    x, g = g2k
    rng = np.random.default_rng(2)
    sample = x[rng.choice(len(x), 200)]
    pair = sq_dists(sample, np.arange(100), sample[100])
    median = float(np.median(np.concatenate([sq_dists(sample, np.arange(200), s) for s in sample[:20]])))
    good = 0
    for i in range(100):
        q = x[rng.integers(len(x))] + 0.01 * rng.standard_normal(x.shape[1])
        c = [0]
        e = select_entry_point(g, q, c)
        assert sq_dists(x, [e], q)[0] <= sq_dists(x, [g.entry_node], q)[0]
        assert c[0] > 0 or len(g.layers) == 1
        good += sq_dists(x, [e], q)[0] <= median
    assert pair.size and good >= 95


# --- open and queue maintenance --------------------------------------------------------


@pytest.mark.parametrize("compiled", [False, True])
@pytest.mark.parametrize("entry_passes", [True, False])
def test_open_visits_entry_only(g2k, compiled, entry_passes):
    x, g = g2k
    attrs = np.full((len(x), 1), 0.9 if entry_passes else 0.1)
    p = Range(0, 0.5, 1.0)
    shared = CandidateHeap(len(x)) if compiled else []
    visited = np.zeros(len(x), dtype=bool)
    st_ = graph_open(g, x[0], p, shared, visited, attrs)
    assert len(shared) == 1 and visited.sum() == 1
    assert st_.efs == 0
    assert st_.counters.dist_comps == 1
    batch, _ = st_.next_filtered()
    if not entry_passes:
        assert all(r.record_id != int(np.flatnonzero(visited)[0]) for r in batch)


def _bare_state(efs, n=6, passed_all=True):
    x = np.arange(n, dtype=np.float64).reshape(-1, 1)
    g = hand_graph([[] for _ in range(n)], x)
    s = GraphSearchState(g, np.array([0.0]), ALWAYS_TRUE, [], np.zeros(n, dtype=bool))
    s.efs = efs
    return s


def test_maintain_empty_top():
    s = _bare_state(efs=10)
    s.maintain_queues(3, True)
    assert s.top == [(-9.0, -3)] and s.shared == [(9.0, 3)] and s.results == [(9.0, 3)]


def test_maintain_full_top_worse_goes_to_recycle():
    s = _bare_state(efs=2)
    s.maintain_queues(1, True)
    s.maintain_queues(2, True)
    before = list(s.shared)
    s.maintain_queues(4, True)
    assert s.shared == before
    assert [r[1] for r in s.recycle] == [4]
    assert sorted(-i for _, i in s.top) == [1, 2]


def test_maintain_eviction():
    s = _bare_state(efs=2)
    s.maintain_queues(4, True)
    s.maintain_queues(2, True)
    s.maintain_queues(1, False)
    assert sorted(-i for _, i in s.top) == [1, 2]
    assert [r[1] for r in s.recycle] == [4]
    assert len(s.top) == 2
    # failing record reaches the shared queue but not the results
    assert (1.0, 1) in s.shared and all(i != 1 for _, i in s.results)


def test_maintain_rejects_visited():
    s = _bare_state(efs=2)
    s.maintain_queues(1, True)
    with pytest.raises(ValueError):
        s.maintain_queues(1, True)


def test_expand_with_empty_recycle():
    s = _bare_state(efs=3)
    s.delta_efs = 4
    s.expand_search()
    assert s.efs == 7 and not s.top


def test_expand_moves_recycled_record():
    s = _bare_state(efs=1)
    s.maintain_queues(1, True)
    s.maintain_queues(5, True)  # top full -> recycle, never shared
    assert not s.pushed[5]
    s.delta_efs = 1
    s.expand_search()
    assert sorted(-i for _, i in s.top) == [1, 5]
    assert (25.0, 5) in s.shared and (25.0, 5) in s.results and s.pushed[5]


# --- expansion policies ---------------------------------------------------------------


def test_neighborhood_passrate():
    x = np.zeros((6, 1))
    g = hand_graph([[1, 2, 3, 4], [], [0], [0], [0], [0]], x)
    attrs = np.array([[0.9], [0.9], [0.9], [0.9], [0.9], [0.1]])
    p = Range(0, 0.5, 1.0)
    assert neighborhood_passrate(g, 0, p, attrs) == 1.0
    assert neighborhood_passrate(g, 1, p, attrs) == 0.0
    assert neighborhood_passrate(g, 2, ALWAYS_TRUE, None) == 1.0
    attrs[0, 0] = 0.1
    assert neighborhood_passrate(g, 3, p, attrs) == 0.0


def _state(g, attrs, p, efs=1000):
    s = GraphSearchState(g, np.zeros(g.vectors.shape[1]), p, [], np.zeros(g.n, dtype=bool), attrs)
    s.efs = efs
    return s


def test_one_hop_counts_only_unvisited():
    x = np.arange(5, dtype=np.float64).reshape(-1, 1)
    g = hand_graph([[1, 2, 3, 4], [], [], [], []], x)
    attrs = np.array([[0.9], [0.1], [0.9], [0.1], [0.9]])
    s = _state(g, attrs, Range(0, 0.5, 1.0))
    s.maintain_queues(2, True)
    s.one_hop_expand(0)
    assert s.counters.dist_comps == 4  # 1 before, 3 new
    assert s.visited[[1, 2, 3, 4]].all()
    s.one_hop_expand(0)
    assert s.counters.dist_comps == 4


def test_two_hop_nothing_passes():
    x = np.zeros((5, 1))
    g = hand_graph([[1, 2], [3], [4], [], []], x)
    s = _state(g, np.full((5, 1), 0.1), Range(0, 0.5, 1.0))
    s.two_hop_expand(0)
    assert s.counters.dist_comps == 0 and not s.shared
    assert s.counters.predicate_evals == 4


def test_two_hop_all_one_hop_pass_equals_one_hop_on_passers():
    x = np.arange(4, dtype=np.float64).reshape(-1, 1)
    g = hand_graph([[1, 2, 3], [], [], []], x)
    attrs = np.array([[0.1], [0.9], [0.9], [0.9]])
    s = _state(g, attrs, Range(0, 0.5, 1.0))
    s.two_hop_expand(0)
    assert sorted(np.flatnonzero(s.visited).tolist()) == [1, 2, 3]


def test_two_hop_cap_on_star():
    # hub 0 with 16 one-hop neighbours (3 passing, sel = 3/16), and 100
    # passing two-hop records spread across the hops
    M = 16
    hops = list(range(1, 17))
    second = list(range(17, 117))
    adj = [hops] + [second[(h - 1) * 7 : (h - 1) * 7 + 7] for h in hops] + [[] for _ in second]
    n = len(adj)
    attrs = np.full((n, 1), 0.9)
    attrs[4:17] = 0.1
    p = Range(0, 0.5, 1.0)
    g = hand_graph(adj, np.arange(n, dtype=np.float64).reshape(-1, 1), M=M)
    assert 0.05 <= neighborhood_passrate(g, 0, p, attrs) < 0.3
    s = _state(g, attrs, p)
    s.two_hop_expand(0)
    visited = set(np.flatnonzero(s.visited).tolist())
    assert visited & set(hops) == {1, 2, 3}
    assert len(visited & set(second)) == 2 * M
    assert s.counters.dist_comps == 3 + 2 * M
    # adjacency order: first hops' lists are used first
    assert visited & set(second) == set(second[: 2 * M])

    # same decisions in the compiled iterator, driven through one step
    heap = CandidateHeap(n)
    gs = graph_open(g, np.array([0.0]), p, heap, np.zeros(n, dtype=bool), attrs, k=10, delta_efs=1000)
    gs.next_filtered()
    assert gs.counters.two_hop >= 1
    assert set(second[: 2 * M]) <= set(np.flatnonzero(gs.visited).tolist())


# --- progressive iterator ---------------------------------------------------------------


def _check_partition(s: GraphSearchState):
    top = {-i for _, i in s.top}
    rec = [(d, i) for d, i, _ in s.recycle]
    assert len(s.top) <= s.efs
    assert not top & {i for _, i in rec}
    assert all(s.visited[i] for i in top)
    assert all(s.visited[i] for _, i in rec)
    if rec:
        assert len(s.top) == s.efs
        top_max = max((-nd, -ni) for nd, ni in s.top)
        assert top_max < min(rec)


def test_iterator_invariants_and_replay(small_data):
    ds, queries = small_data
    g = build_graph(ds.vectors, M=8, efc=64, seed=0)
    p = And((Range(0, 0.2, 0.7), Range(1, 0.0, 0.6)))
    for q in queries[:10]:
        visited = np.zeros(len(ds), dtype=bool)
        s = graph_open(g, q, p, [], visited, ds.attributes, k=5)
        seen_prev = visited.copy()
        emitted = []
        for _ in range(30):
            if s.exhausted:
                break
            # replay oracle for the widening step
            pool = sorted([(-nd, -ni) for nd, ni in s.top] + [(d, i) for d, i, _ in s.recycle])
            s.expand_search()
            assert sorted((-nd, -ni) for nd, ni in s.top) == pool[: s.efs]
            s.efs -= s.delta_efs
            batch, sel = s.next_filtered()
            _check_partition(s)
            assert 0.0 <= sel <= 1.0
            assert [r.dist for r in batch] == sorted(r.dist for r in batch)
            emitted += batch
            assert (visited >= seen_prev).all()
            seen_prev = visited.copy()
        for r in emitted:
            assert p.evaluate(ds.attributes[r.record_id])
            assert r.dist == sq_dists(ds.vectors, [r.record_id], q)[0]
        assert s.counters.dist_comps == visited.sum()


@pytest.mark.parametrize("compiled", [False, True])
def test_always_true_drains_everything(compiled):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((300, 6))
    g = build_graph(x, M=6, efc=40, seed=2)
    q = rng.standard_normal(6)
    shared = CandidateHeap(300) if compiled else []
    visited = np.zeros(300, dtype=bool)
    s = graph_open(g, q, ALWAYS_TRUE, shared, visited, k=10)
    out = []
    while not s.exhausted:
        batch, sel = s.next_filtered()
        assert sel == 1.0 or (not batch and sel == 0.0)
        out += batch
    assert sorted(r.record_id for r in out) == list(range(300))
    assert s.counters.two_hop == 0 and s.counters.low_sel_breaks == 0
    assert s.counters.predicate_evals == 0
    batch, sel = s.next_filtered()
    assert batch == [] and sel == 0.0
    # emitted in batches of k; the first batches hold the exact nearest records
    order = _exact_knn(x, q, 10).tolist()
    assert [r.record_id for r in out[:10]][:1] == order[:1]


@st.composite
def random_problem(draw):
    n = draw(st.integers(2, 60))
    seed = draw(st.integers(0, 10_000))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3)).round(1)  # rounding makes distance ties likely
    attrs = rng.random((n, 2)).round(1)
    deg = draw(st.integers(0, 6))
    adj = [sorted(set(rng.choice(n, size=min(deg, n), replace=False).tolist()) - {v}) for v in range(n)]
    p = draw(
        st.sampled_from(
            [ALWAYS_TRUE, Range(0, 0.0, 0.3), And((Range(0, 0.2, 0.9), Range(1, 0.0, 0.4))), Range(1, 0.0, 0.05)]
        )
    )
    k = draw(st.integers(1, 6))
    return x, attrs, adj, p, k, rng.standard_normal(3).round(1)


@settings(max_examples=80)
@given(random_problem())
def test_engines_agree_step_by_step(problem):
    x, attrs, adj, p, k, q = problem
    g = hand_graph(adj, x, M=3)
    va, vb = np.zeros(len(x), dtype=bool), np.zeros(len(x), dtype=bool)
    a = graph_open(g, q, p, [], va, attrs, k=k, counters=SearchCounters())
    b = graph_open(g, q, p, CandidateHeap(len(x)), vb, attrs, k=k, counters=SearchCounters())
    for _ in range(len(x) + 2):
        ra, sa = a.next_filtered()
        rb, sb = b.next_filtered()
        assert ra == rb and sa == sb
        assert np.array_equal(va, vb)
        assert a.counters == b.counters
        assert sorted(heapq.nsmallest(len(a.shared), a.shared)) == b.shared.items()
        assert sorted((-nd, -ni) for nd, ni in a.top) == b.top_items()
        assert a.exhausted == b.exhausted
