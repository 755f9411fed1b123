"""IVF-partitioned per-attribute sorted indexes and the relational candidate iterator."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import ALWAYS_TRUE, AlwaysTrue, And, Dataset, Or, Predicate, Range, ScoredRecord, sq_dists
from .graph import CandidateHeap, GraphIndex, SearchCounters, build_graph, graph_open

CENTROID_M = 16
CENTROID_EFC = 100
CLUSTER_STEP = 8

_ASSIGN_CHUNK = 8192


# --- k-means ----------------------------------------------------------------


def _nearest_centroid(vectors: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c_norm = np.einsum("ij,ij->i", centroids, centroids)
    labels = np.empty(vectors.shape[0], dtype=np.int64)
    best = np.empty(vectors.shape[0], dtype=np.float64)
    for s in range(0, vectors.shape[0], _ASSIGN_CHUNK):
        block = vectors[s : s + _ASSIGN_CHUNK]
        d = c_norm[None, :] - 2.0 * (block @ centroids.T)
        lab = np.argmin(d, axis=1)
        labels[s : s + block.shape[0]] = lab
        best[s : s + block.shape[0]] = d[np.arange(block.shape[0]), lab] + np.einsum("ij,ij->i", block, block)
    return labels, np.maximum(best, 0.0)


def _kmeans_pp(vectors: np.ndarray, nlist: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = sq_dists(vectors, slice(None), vectors[chosen[0]])
    for _ in range(1, nlist):
        total = d2.sum()
        if total <= 0.0:
            # only duplicates of chosen points remain
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rest[rng.integers(rest.size)])
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        np.minimum(d2, sq_dists(vectors, slice(None), vectors[idx]), out=d2)
    return vectors[chosen].copy()


def _means(vectors: np.ndarray, labels: np.ndarray, nlist: int, old: np.ndarray) -> np.ndarray:
    sums = np.zeros((nlist, vectors.shape[1]))
    np.add.at(sums, labels, vectors)
    sizes = np.bincount(labels, minlength=nlist)
    out = old.copy()
    nz = sizes > 0
    out[nz] = sums[nz] / sizes[nz, None]
    return out


def _repair_empty(vectors: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> None:
    nlist = centroids.shape[0]
    sizes = np.bincount(labels, minlength=nlist)
    for c in np.flatnonzero(sizes == 0):
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        far = members[int(np.argmax(sq_dists(vectors, members, centroids[big])))]
        labels[far] = c
        centroids[c] = vectors[far]
        sizes[big] -= 1
        sizes[c] += 1


def build_clusters(vectors: np.ndarray, nlist: int, seed: int = 0, max_iters: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """k-means with k-means++ seeding; every returned cluster is non-empty."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if not 1 <= nlist <= n:
        raise ValueError(f"nlist must be in [1, {n}], got {nlist}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(vectors, nlist, rng)
    labels, _ = _nearest_centroid(vectors, centroids)
    for _ in range(max_iters):
        _repair_empty(vectors, labels, centroids)
        centroids = _means(vectors, labels, nlist, centroids)
        new, _ = _nearest_centroid(vectors, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
    _repair_empty(vectors, labels, centroids)
    centroids = _means(vectors, labels, nlist, centroids)
    return centroids, labels


# --- per-cluster sorted runs --------------------------------------------------


@dataclass
class ClusterTrees:
    """Sorted ``(value, id)`` runs for every (attribute, cluster).

    Runs for attribute ``a`` are concatenated in cluster order in
    ``ids[a]`` / ``values[a]``; cluster ``c`` occupies ``offsets[c]:offsets[c+1]``
    for every attribute.
    """

    offsets: np.ndarray
    ids: np.ndarray
    values: np.ndarray

    @property
    def nlist(self) -> int:
        return self.offsets.shape[0] - 1

    def range_ids(self, cluster: int, attr: int, lo: float, hi: float) -> np.ndarray:
        s, e = self.offsets[cluster], self.offsets[cluster + 1]
        vals = self.values[attr, s:e]
        i = np.searchsorted(vals, lo, side="left")
        j = np.searchsorted(vals, hi, side="right")
        return self.ids[attr, s + i : s + j]

    def members(self, cluster: int) -> np.ndarray:
        s, e = self.offsets[cluster], self.offsets[cluster + 1]
        return np.sort(self.ids[0, s:e])


def build_cluster_trees(attributes: np.ndarray, assignments: np.ndarray, nlist: int | None = None) -> ClusterTrees:
    attributes = np.asarray(attributes, dtype=np.float64)
    assignments = np.asarray(assignments, dtype=np.int64)
    n, m = attributes.shape
    if nlist is None:
        nlist = int(assignments.max()) + 1 if n else 0
    if n and (assignments.min() < 0 or assignments.max() >= nlist):
        raise ValueError("assignment outside [0, nlist)")
    sizes = np.bincount(assignments, minlength=nlist)
    offsets = np.zeros(nlist + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    rid = np.arange(n, dtype=np.int64)
    ids = np.empty((m, n), dtype=np.int64)
    values = np.empty((m, n), dtype=np.float64)
    for a in range(m):
        order = np.lexsort((rid, attributes[:, a], assignments))
        ids[a] = order
        values[a] = attributes[order, a]
    return ClusterTrees(offsets, ids, values)


def build_centroid_graph(centroids: np.ndarray, seed: int = 0) -> GraphIndex:
    return build_graph(centroids, M=CENTROID_M, efc=CENTROID_EFC, seed=seed)


@dataclass
class ClusteredBTrees:
    centroids: np.ndarray
    assignments: np.ndarray
    trees: ClusterTrees
    centroid_graph: GraphIndex
    seed: int = 0
    vectors: np.ndarray | None = field(default=None, repr=False)
    attributes: np.ndarray | None = field(default=None, repr=False)

    @property
    def nlist(self) -> int:
        return self.centroids.shape[0]

    def cluster_sizes(self) -> np.ndarray:
        return np.diff(self.trees.offsets)


def build_clustered_btrees(dataset: Dataset, nlist: int, seed: int = 0, max_iters: int = 20) -> ClusteredBTrees:
    centroids, labels = build_clusters(dataset.vectors, nlist, seed, max_iters)
    trees = build_cluster_trees(dataset.attributes, labels, nlist)
    cg = build_centroid_graph(centroids, seed)
    return ClusteredBTrees(centroids, labels, trees, cg, seed, dataset.vectors, dataset.attributes)


# --- scans -------------------------------------------------------------------


def _scan_candidates(trees: ClusterTrees, node: Predicate, cluster: int) -> np.ndarray:
    """Superset of the cluster members passing ``node``, read off the sorted runs."""
    if isinstance(node, Range):
        return trees.range_ids(cluster, node.attr, node.lo, node.hi)
    if isinstance(node, And):
        driver = next((c for c in node.children if isinstance(c, Range)), node.children[0])
        return _scan_candidates(trees, driver, cluster)
    if isinstance(node, Or):
        parts = [_scan_candidates(trees, c, cluster) for c in node.children]
        return np.unique(np.concatenate(parts))
    return trees.members(cluster)


def cluster_range_scan(
    cbt: ClusteredBTrees, cluster: int, p: Predicate, counters: SearchCounters | None = None
) -> np.ndarray:
    """Ids of cluster members that satisfy ``p``, in index scan order, each once."""
    if not 0 <= cluster < cbt.nlist:
        raise IndexError(f"cluster {cluster} out of range [0, {cbt.nlist})")
    cand = _scan_candidates(cbt.trees, p, cluster)
    if isinstance(p, AlwaysTrue) or isinstance(p, Range) or cand.size == 0:
        return cand
    if counters is not None:
        counters.predicate_evals += cand.size
    return cand[p.mask(cbt.attributes[cand])]


class CbtSearchState:
    """Relational iterator: proposes predicate-passing records cluster by cluster."""

    def __init__(
        self,
        cbt: ClusteredBTrees,
        q: np.ndarray,
        p: Predicate,
        shared: list | CandidateHeap,
        visited: np.ndarray,
        *,
        k: int = 10,
        efi: int | None = None,
        counters: SearchCounters | None = None,
    ) -> None:
        self.cbt = cbt
        self.q = np.asarray(q, dtype=np.float64)
        self.p = p
        self.shared = shared
        self.visited = visited
        self.k = k
        self.batch_size = math.ceil(k / 2)
        self.efi = efi if efi is not None else 2 * k
        self.counters = counters if counters is not None else SearchCounters()
        self.relq: list[tuple[float, int]] = []
        compiled = isinstance(shared, CandidateHeap)
        self._push = shared.push if compiled else (lambda d, rid: heapq.heappush(shared, (d, rid)))
        self.cluster_iter = graph_open(
            cbt.centroid_graph,
            self.q,
            ALWAYS_TRUE,
            CandidateHeap(cbt.nlist) if compiled else [],
            np.zeros(cbt.nlist, dtype=bool),
            k=CLUSTER_STEP,
            delta_efs=CLUSTER_STEP,
        )
        self._pending: deque[int] = deque()
        self.consumed = np.zeros(cbt.nlist, dtype=bool)
        self.n_consumed = 0
        self.scan = np.empty(0, dtype=np.int64)
        self.bg = 0
        self.ed = 0
        self._fallback_done = False

    @property
    def centroid_comps(self) -> int:
        c = self.cluster_iter.counters
        return c.dist_comps + c.routing_comps

    @property
    def clusters_left(self) -> bool:
        return self.n_consumed < self.cbt.nlist

    @property
    def exhausted(self) -> bool:
        return not self.clusters_left and self.bg >= self.ed and not self.relq

    def _next_cluster(self) -> int | None:
        while True:
            while self._pending:
                c = self._pending.popleft()
                if not self.consumed[c]:
                    return c
            if not self.clusters_left:
                return None
            it = self.cluster_iter
            if not it.exhausted:
                batch, _ = it.next_filtered()
                self._pending.extend(r.record_id for r in batch)
                continue
            # clusters unreachable in the centroid graph: rank them directly
            rest = np.flatnonzero(~self.consumed)
            d = sq_dists(self.cbt.centroids, rest, self.q)
            it.counters.dist_comps += rest.size
            order = np.lexsort((rest, d))
            self._pending.extend(rest[order].tolist())

    def _open_cluster(self, c: int) -> None:
        self.consumed[c] = True
        self.n_consumed += 1
        self.scan = cluster_range_scan(self.cbt, c, self.p, self.counters)
        self.bg, self.ed = 0, self.scan.shape[0]

    def next(self) -> list[ScoredRecord]:
        cnt = 0
        vectors = self.cbt.vectors
        while cnt < self.efi:
            if self.bg >= self.ed:
                c = self._next_cluster()
                if c is None:
                    break
                self._open_cluster(c)
                continue
            chunk = self.scan[self.bg : self.bg + (self.efi - cnt)]
            self.bg += chunk.shape[0]
            fresh = chunk[~self.visited[chunk]]
            if fresh.size == 0:
                continue
            self.visited[fresh] = True
            d = sq_dists(vectors, fresh, self.q)
            self.counters.dist_comps += fresh.size
            for rid, dist in zip(fresh.tolist(), d.tolist()):
                heapq.heappush(self.relq, (dist, rid))
            cnt += fresh.size
        batch = []
        while self.relq and len(batch) < self.batch_size:
            d, rid = heapq.heappop(self.relq)
            self._push(d, rid)
            batch.append(ScoredRecord(rid, d))
        return batch


def cbt_open(
    cbt: ClusteredBTrees,
    q: np.ndarray,
    p: Predicate,
    shared_candidates: list | CandidateHeap,
    visited: np.ndarray,
    **kwargs,
) -> CbtSearchState:
    return CbtSearchState(cbt, q, p, shared_candidates, visited, **kwargs)
