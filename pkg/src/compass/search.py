"""Cooperative graph + relational filtered k-NN search."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustered import (
    ClusteredBTrees,
    build_centroid_graph,
    build_cluster_trees,
    build_clustered_btrees,
    cbt_open,
)
from .core import Dataset, Predicate, ScoredRecord, SearchConfig, check_predicate
from .graph import CandidateHeap, GraphIndex, SearchCounters, build_graph, graph_open

VARIANTS = ("full", "graph_only", "relational_only")
ENGINES = ("compiled", "python")


@dataclass
class CompassIndex:
    dataset: Dataset
    graph: GraphIndex
    cbt: ClusteredBTrees
    config: SearchConfig = field(default_factory=SearchConfig)
    _global_cbt: ClusteredBTrees | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.graph.n != len(self.dataset) or self.cbt.assignments.shape[0] != len(self.dataset):
            raise ValueError("graph, clusters and dataset disagree on the number of records")
        if self.graph.vectors is None:
            self.graph.vectors = self.dataset.vectors
        if self.cbt.vectors is None:
            self.cbt.vectors = self.dataset.vectors
            self.cbt.attributes = self.dataset.attributes
        if self.cbt.centroid_graph.vectors is None:
            self.cbt.centroid_graph.vectors = self.cbt.centroids

    @classmethod
    def build(
        cls,
        dataset: Dataset,
        M: int = 16,
        efc: int = 200,
        nlist: int | None = None,
        seed: int = 0,
        config: SearchConfig | None = None,
    ) -> "CompassIndex":
        if nlist is None:
            nlist = default_nlist(len(dataset))
        graph = build_graph(dataset.vectors, M, efc, seed)
        cbt = build_clustered_btrees(dataset, nlist, seed)
        return cls(dataset, graph, cbt, config or SearchConfig())

    def global_cbt(self) -> ClusteredBTrees:
        """Single-cluster variant: one sorted run per attribute over the whole dataset."""
        if self.cbt.nlist == 1:
            return self.cbt
        if self._global_cbt is None:
            ds = self.dataset
            labels = np.zeros(len(ds), dtype=np.int64)
            centroid = ds.vectors.mean(axis=0, keepdims=True)
            self._global_cbt = ClusteredBTrees(
                centroid,
                labels,
                build_cluster_trees(ds.attributes, labels, 1),
                build_centroid_graph(centroid, self.cbt.seed),
                self.cbt.seed,
                ds.vectors,
                ds.attributes,
            )
        return self._global_cbt


def default_nlist(n: int) -> int:
    return max(1, math.ceil(n / 100))


@dataclass
class QueryOutcome:
    results: list[ScoredRecord]
    n_dist_comps: int
    n_predicate_evals: int
    n_cbt_pulls: int
    wall_time: float
    visited_count: int = -1
    counters: SearchCounters | None = None

    @property
    def ids(self) -> list[int]:
        return [r.record_id for r in self.results]


def _validate(index: CompassIndex, q: np.ndarray, p: Predicate, k: int, config: SearchConfig) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dataset.dim,):
        raise ValueError(f"query has shape {q.shape}, expected ({index.dataset.dim},)")
    if k < 1:
        raise ValueError("k must be >= 1")
    if config.ef < k:
        raise ValueError(f"ef ({config.ef}) must be >= k ({k})")
    check_predicate(p, index.dataset.n_attrs)
    return q


def compass_search_variant(
    index: CompassIndex,
    q: np.ndarray,
    p: Predicate,
    k: int = 10,
    config: SearchConfig | None = None,
    variant: str = "full",
    engine: str = "compiled",
) -> QueryOutcome:
    """Run one query. ``engine="python"`` selects the ``heapq`` reference iterators."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    config = config or index.config
    q = _validate(index, q, p, k, config)
    t0 = time.perf_counter()

    n = len(index.dataset)
    shared: list | CandidateHeap = CandidateHeap(n) if engine == "compiled" else []
    visited = np.zeros(n, dtype=bool)
    rz: list[tuple[float, int]] = []
    counters = SearchCounters()
    cbt = index.global_cbt() if variant == "graph_only" else index.cbt

    cs = cbt_open(cbt, q, p, shared, visited, k=k, efi=config.resolved_efi(k), counters=counters)
    if variant == "relational_only":
        while len(rz) < config.ef and not cs.exhausted:
            counters.cbt_pulls += 1
            for rid, d in cs.next():
                heapq.heappush(rz, (-d, -rid))
    else:
        gs = graph_open(
            index.graph,
            q,
            p,
            shared,
            visited,
            index.dataset.attributes,
            k=k,
            alpha=config.alpha,
            beta=config.beta,
            delta_efs=config.resolved_delta_efs(k),
            counters=counters,
        )
        while len(rz) < config.ef and not (gs.exhausted and cs.exhausted):
            records, sel = gs.next_filtered()
            for rid, d in records:
                heapq.heappush(rz, (-d, -rid))
            if sel < config.beta:
                counters.cbt_pulls += 1
                for rid, d in cs.next():
                    heapq.heappush(rz, (-d, -rid))

    best = heapq.nlargest(k, rz)
    results = [ScoredRecord(-ni, -nd) for nd, ni in best]
    counters.centroid_comps = cs.centroid_comps
    return QueryOutcome(
        results=results,
        n_dist_comps=counters.dist_comps,
        n_predicate_evals=counters.predicate_evals,
        n_cbt_pulls=counters.cbt_pulls,
        wall_time=time.perf_counter() - t0,
        visited_count=int(np.count_nonzero(visited)),
        counters=counters,
    )


def compass_search(
    index: CompassIndex,
    q: np.ndarray,
    p: Predicate,
    k: int = 10,
    config: SearchConfig | None = None,
    engine: str = "compiled",
) -> QueryOutcome:
    return compass_search_variant(index, q, p, k, config, "full", engine)
