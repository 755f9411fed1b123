import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compass import (
    ALWAYS_TRUE,
    And,
    CompassIndex,
    Dataset,
    Or,
    PredicateError,
    Range,
    SearchConfig,
    brute_force_filtered_knn,
    compass_search,
    compass_search_variant,
    recall,
)
from compass.search import default_nlist


def _truth(ds, q, p, k):
    return [r.record_id for r in brute_force_filtered_knn(ds, q, p, k)]


def test_default_nlist():
    assert default_nlist(1) == 1 and default_nlist(100) == 1 and default_nlist(101) == 2
    assert default_nlist(100_000) == 1000


def test_exact_when_ef_covers_everything(small_data, small_index):
    ds, queries = small_data
    cfg = SearchConfig(ef=len(ds))
    for p in (ALWAYS_TRUE, Range(0, 0.1, 0.4), And((Range(0, 0.0, 0.5), Range(1, 0.5, 1.0)))):
        for q in queries[:5]:
            out = compass_search(small_index, q, p, k=10, config=cfg)
            assert out.ids == _truth(ds, q, p, 10)


def test_few_passing_records_all_found(small_data, small_index):
    ds, queries = small_data
    attrs = ds.attributes.copy()
    attrs[:, 2] = 0.0
    attrs[[5, 77, 300], 2] = 1.0
    ds2 = Dataset(ds.vectors, attrs)
    idx = CompassIndex.build(ds2, M=8, efc=64, nlist=12)
    out = compass_search(idx, queries[0], Range(2, 0.99, 1.0), k=10, config=SearchConfig(ef=10))
    assert sorted(out.ids) == [5, 77, 300]


def test_zero_passing_is_empty(small_data, small_index):
    _, queries = small_data
    out = compass_search(small_index, queries[0], Range(0, 1.0, 1.0), k=10)
    assert out.results == []


def test_results_sound_sorted_unique(small_data, small_index):
    ds, queries = small_data
    p = Or((Range(0, 0.0, 0.1), Range(1, 0.9, 1.0)))
    for q in queries[:10]:
        out = compass_search(small_index, q, p, k=10, config=SearchConfig(ef=20))
        ids = out.ids
        assert len(ids) == len(set(ids)) == 10
        assert all(p.evaluate(ds.attributes[i]) for i in ids)
        d = [r.dist for r in out.results]
        assert d == sorted(d)
        assert out.n_dist_comps <= out.visited_count <= len(ds)


def test_kth_distance_never_worse_with_larger_ef(small_data, small_index):
    ds, queries = small_data
    p = Range(1, 0.2, 0.5)
    for q in queries[:10]:
        prev = np.inf
        for ef in (10, 20, 40, 80, 160):
            out = compass_search(small_index, q, p, k=10, config=SearchConfig(ef=ef))
            kth = out.results[-1].dist
            assert kth <= prev + 1e-12
            prev = kth


def test_recall_reasonable(small_data, small_index):
    ds, queries = small_data
    p = Range(0, 0.3, 0.6)
    r = [recall(compass_search(small_index, q, p, 10, SearchConfig(ef=60)).ids, _truth(ds, q, p, 10)) for q in queries]
    assert np.mean(r) >= 0.9


def test_validation(small_data, small_index):
    _, queries = small_data
    with pytest.raises(ValueError):
        compass_search(small_index, queries[0][:3], ALWAYS_TRUE)
    with pytest.raises(ValueError):
        compass_search(small_index, queries[0], ALWAYS_TRUE, k=20, config=SearchConfig(ef=10))
    with pytest.raises(PredicateError):
        compass_search(small_index, queries[0], Range(7, 0, 1))
    with pytest.raises(ValueError):
        compass_search_variant(small_index, queries[0], ALWAYS_TRUE, variant="nope")
    with pytest.raises(ValueError):
        compass_search(small_index, queries[0], ALWAYS_TRUE, engine="nope")


def test_relational_only_exact_without_filter(small_data, small_index):
    ds, queries = small_data
    cfg = SearchConfig(ef=len(ds))
    for q in queries[:3]:
        out = compass_search_variant(small_index, q, ALWAYS_TRUE, 10, cfg, "relational_only")
        assert out.ids == _truth(ds, q, ALWAYS_TRUE, 10)
        assert out.n_cbt_pulls > 0


def test_graph_only_matches_full_with_one_cluster(small_data):
    ds, queries = small_data
    idx = CompassIndex.build(ds, M=8, efc=64, nlist=1)
    p = Range(2, 0.0, 0.03)
    for q in queries[:5]:
        a = compass_search_variant(idx, q, p, 10, SearchConfig(ef=30), "full")
        b = compass_search_variant(idx, q, p, 10, SearchConfig(ef=30), "graph_only")
        assert a.ids == b.ids and a.n_dist_comps == b.n_dist_comps


def test_unfiltered_never_pivots(small_data, small_index):
    _, queries = small_data
    out = compass_search(small_index, queries[0], ALWAYS_TRUE, 10)
    assert out.n_cbt_pulls == 0 and out.n_predicate_evals == 0


@settings(max_examples=25)
@given(
    st.integers(0, 39),
    st.sampled_from([ALWAYS_TRUE, Range(0, 0.0, 0.02), Range(1, 0.4, 0.6), And((Range(0, 0.0, 0.3), Range(2, 0.5, 0.9)))]),
    st.integers(1, 12),
    st.integers(12, 80),
)
def test_engines_agree(small_data, small_index, qi, p, k, ef):
    _, queries = small_data
    cfg = SearchConfig(ef=ef)
    for variant in ("full", "graph_only", "relational_only"):
        a = compass_search_variant(small_index, queries[qi], p, k, cfg, variant, "python")
        b = compass_search_variant(small_index, queries[qi], p, k, cfg, variant, "compiled")
        assert a.results == b.results
        assert a.counters == b.counters
