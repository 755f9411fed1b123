"""Exact filtered k-NN plus pre-filter and post-filter reference strategies."""

from __future__ import annotations

import time

import numpy as np

from .core import Dataset, Predicate, ScoredRecord, sq_dists
from .graph import search_unfiltered
from .search import CompassIndex, QueryOutcome

POSTFILTER_GROWTH = 2
POSTFILTER_MAX_ROUNDS = 8


def brute_force_filtered_knn(dataset: Dataset, q: np.ndarray, p: Predicate, k: int) -> list[ScoredRecord]:
    """Exact top-k of the predicate-passing records, ordered by (dist, id)."""
    q = np.asarray(q, dtype=np.float64)
    ids = np.flatnonzero(p.mask(dataset.attributes))
    if ids.size == 0:
        return []
    d = sq_dists(dataset.vectors, ids, q)
    order = np.lexsort((ids, d))[:k]
    return [ScoredRecord(int(ids[i]), float(d[i])) for i in order]


def prefilter_search(dataset: Dataset, q: np.ndarray, p: Predicate, k: int) -> QueryOutcome:
    t0 = time.perf_counter()
    q = np.asarray(q, dtype=np.float64)
    ids = np.flatnonzero(p.mask(dataset.attributes))
    results: list[ScoredRecord] = []
    if ids.size:
        d = sq_dists(dataset.vectors, ids, q)
        order = np.lexsort((ids, d))[:k]
        results = [ScoredRecord(int(ids[i]), float(d[i])) for i in order]
    return QueryOutcome(
        results=results,
        n_dist_comps=int(ids.size),
        n_predicate_evals=len(dataset),
        n_cbt_pulls=0,
        wall_time=time.perf_counter() - t0,
        visited_count=int(ids.size),
    )


def postfilter_search(
    index: CompassIndex, q: np.ndarray, p: Predicate, k: int, k0: int | None = None
) -> tuple[QueryOutcome, int]:
    """Unfiltered graph search with a growing result size; returns (outcome, rounds)."""
    k0 = k if k0 is None else k0
    if k0 < k:
        raise ValueError("k0 must be >= k")
    t0 = time.perf_counter()
    q = np.asarray(q, dtype=np.float64)
    n = len(index.dataset)
    attrs = index.dataset.attributes
    kp = min(k0, n)
    n_comp = n_eval = 0
    survivors: list[ScoredRecord] = []
    rounds = 0
    while rounds < POSTFILTER_MAX_ROUNDS:
        rounds += 1
        found, comps = search_unfiltered(index.graph, q, ef=kp, k=kp)
        n_comp += comps
        ids = np.array([r.record_id for r in found], dtype=np.int64)
        n_eval += ids.size
        keep = p.mask(attrs[ids]) if ids.size else np.zeros(0, dtype=bool)
        survivors = [r for r, ok in zip(found, keep.tolist()) if ok]
        if len(survivors) >= k or kp >= n:
            break
        kp = min(kp * POSTFILTER_GROWTH, n)
    outcome = QueryOutcome(
        results=survivors[:k],
        n_dist_comps=n_comp,
        n_predicate_evals=n_eval,
        n_cbt_pulls=0,
        wall_time=time.perf_counter() - t0,
    )
    return outcome, rounds
