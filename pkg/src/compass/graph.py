"""Layered proximity graph and the progressive filtered traversal over it."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import _hnsw, _kernels
from .core import AlwaysTrue, Predicate, ScoredRecord, predicate_program, sq_dists


@dataclass
class GraphLayer:
    """CSR adjacency for one layer. ``nodes`` is sorted; layer 0 holds every id."""

    nodes: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray

    def __post_init__(self) -> None:
        self._pos = None if self.is_dense else {int(v): i for i, v in enumerate(self.nodes)}

    @property
    def is_dense(self) -> bool:
        return self.nodes.shape[0] == 0 or int(self.nodes[-1]) == self.nodes.shape[0] - 1

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def __contains__(self, node: int) -> bool:
        if self._pos is None:
            return 0 <= node < len(self)
        return node in self._pos

    def neighbors_of(self, node: int) -> np.ndarray:
        i = node if self._pos is None else self._pos[node]
        return self.neighbors[self.offsets[i] : self.offsets[i + 1]]


@dataclass
class GraphIndex:
    layers: list[GraphLayer]
    M: int
    entry_node: int
    efc: int = 200
    seed: int = 0
    vectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.layers[0])

    def neighbors(self, node: int) -> np.ndarray:
        return self.layers[0].neighbors_of(node)

    def degree_ok(self) -> bool:
        for level, layer in enumerate(self.layers):
            cap = 2 * self.M if level == 0 else self.M
            if np.diff(layer.offsets).max(initial=0) > cap:
                return False
        return True


def _draw_levels(n: int, M: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ml = 1.0 / math.log(M)
    u = rng.random(n)
    return np.minimum(np.floor(-np.log1p(-u) * ml), 16).astype(np.int64)


def build_graph(vectors: np.ndarray, M: int = 16, efc: int = 200, seed: int = 0) -> GraphIndex:
    """Insert every vector into an HNSW graph (deterministic for a fixed seed)."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("cannot build a graph over an empty dataset")
    if M < 2:
        raise ValueError("M must be >= 2")
    if efc < M:
        raise ValueError("efc must be >= M")
    n = vectors.shape[0]
    levels = _draw_levels(n, M, seed)
    links, counts, upper_row, entry, max_level = _hnsw.build_links(vectors, levels, M, efc)

    layers = []
    for level in range(max_level + 1):
        nodes = np.flatnonzero(levels >= level)
        if level == 0:
            rows = nodes
        else:
            rows = n + upper_row[nodes] * max_level + (level - 1)
        cnt = counts[rows]
        offsets = np.zeros(len(nodes) + 1, dtype=np.int64)
        np.cumsum(cnt, out=offsets[1:])
        mask = np.arange(links.shape[1])[None, :] < cnt[:, None]
        nbrs = links[rows][mask]
        layers.append(GraphLayer(nodes.astype(np.int64), offsets, nbrs.astype(np.int64)))
    return GraphIndex(layers, M, int(entry), efc, seed, vectors)


def select_entry_point(graph: GraphIndex, q: np.ndarray, counter: list[int] | None = None) -> int:
    """Greedy descent through the upper layers; returns the layer-0 arrival node.

    ``counter[0]`` is incremented by the number of routing distances computed.
    """
    vectors = graph.vectors
    cur = graph.entry_node
    if len(graph.layers) == 1:
        return cur
    cur_d = float(sq_dists(vectors, np.array([cur]), q)[0])
    n_comp = 1
    for layer in reversed(graph.layers[1:]):
        changed = True
        while changed:
            changed = False
            nbrs = layer.neighbors_of(cur)
            if nbrs.size == 0:
                break
            d = sq_dists(vectors, nbrs, q)
            n_comp += nbrs.size
            j = int(np.argmin(d))
            if d[j] < cur_d:
                cur, cur_d = int(nbrs[j]), float(d[j])
                changed = True
    if counter is not None:
        counter[0] += n_comp
    return cur


def search_unfiltered(graph: GraphIndex, q: np.ndarray, ef: int, k: int | None = None) -> tuple[list[ScoredRecord], int]:
    """Plain HNSW best-first search on layer 0. Returns (top-k, #distance computations)."""
    k = ef if k is None else k
    vectors = graph.vectors
    counter = [0]
    entry = select_entry_point(graph, q, counter)
    visited = np.zeros(graph.n, dtype=bool)
    visited[entry] = True
    d0 = float(sq_dists(vectors, np.array([entry]), q)[0])
    n_comp = counter[0] + 1
    cand = [(d0, entry)]
    top = [(-d0, -entry)]
    while cand:
        d, c = heapq.heappop(cand)
        if len(top) >= ef and (d, c) > (-top[0][0], -top[0][1]):
            break
        nbrs = graph.neighbors(c)
        nbrs = nbrs[~visited[nbrs]]
        if nbrs.size == 0:
            continue
        visited[nbrs] = True
        ds = sq_dists(vectors, nbrs, q)
        n_comp += nbrs.size
        for e, de in zip(nbrs.tolist(), ds.tolist()):
            if len(top) < ef or (de, e) < (-top[0][0], -top[0][1]):
                heapq.heappush(cand, (de, e))
                heapq.heappush(top, (-de, -e))
                if len(top) > ef:
                    heapq.heappop(top)
    out = sorted((-nd, -ni) for nd, ni in top)[:k]
    return [ScoredRecord(i, d) for d, i in out], n_comp


# --- progressive filtered traversal ---------------------------------------


@dataclass
class SearchCounters:
    """Per-query instrumentation shared by both iterators."""

    dist_comps: int = 0
    routing_comps: int = 0
    centroid_comps: int = 0
    predicate_evals: int = 0
    one_hop: int = 0
    two_hop: int = 0
    low_sel_breaks: int = 0
    cbt_pulls: int = 0


class GraphSearchState:
    """Pull-based filtered iterator over a graph.

    ``shared`` is the min-heap of ``(dist, id)`` candidates and ``visited`` the
    record bitmap; both are owned by the caller and may be fed by other
    iterators. ``top`` is a max-heap keyed by ``(-dist, -id)``, ``recycle`` and
    ``results`` are min-heaps of ``(dist, id, passed)``.
    """

    def __init__(
        self,
        graph: GraphIndex,
        q: np.ndarray,
        p: Predicate,
        shared: list,
        visited: np.ndarray,
        attributes: np.ndarray | None = None,
        *,
        k: int = 10,
        alpha: float = 0.3,
        beta: float = 0.05,
        delta_efs: int | None = None,
        counters: SearchCounters | None = None,
    ) -> None:
        if not isinstance(p, AlwaysTrue) and attributes is None:
            raise ValueError("a filtering predicate needs the attribute table")
        self.graph = graph
        self.vectors = graph.vectors
        self.q = np.asarray(q, dtype=np.float64)
        self.p = p
        self.attributes = attributes
        self.shared = shared
        self.visited = visited
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self.delta_efs = delta_efs if delta_efs is not None else k
        self.counters = counters if counters is not None else SearchCounters()
        self.efs = 0
        self.top: list[tuple[float, int]] = []
        self.recycle: list[tuple[float, int, bool]] = []
        self.results: list[tuple[float, int]] = []
        self.pushed = np.zeros(graph.n, dtype=bool)
        self.sel = 0.0
        self.two_hop_cap = 2 * graph.M
        self._trivial = isinstance(p, AlwaysTrue)

    # -- helpers --

    def passes(self, ids: np.ndarray) -> np.ndarray:
        if self._trivial:
            return np.ones(ids.shape[0], dtype=bool)
        self.counters.predicate_evals += ids.shape[0]
        return self.p.mask(self.attributes[ids])

    def _top_max(self) -> tuple[float, int]:
        nd, ni = self.top[0]
        return -nd, -ni

    @property
    def exhausted(self) -> bool:
        """Nothing left that could still be expanded or emitted."""
        return not self.shared and not self.recycle and not self.results

    # -- queue maintenance --

    def maintain_queues(self, record_id: int, passed: bool) -> None:
        """Visit one record: compute its distance and file it into the queues."""
        if self.visited[record_id]:
            raise ValueError(f"record {record_id} already visited")
        ids = np.array([record_id])
        self._visit_batch(ids, np.array([passed]))

    def _visit_batch(self, ids: np.ndarray, passed: np.ndarray) -> None:
        self.visited[ids] = True
        dists = sq_dists(self.vectors, ids, self.q)
        self.counters.dist_comps += ids.shape[0]
        top, shared, recycle, results = self.top, self.shared, self.recycle, self.results
        efs = self.efs
        pushed = self.pushed
        for rid, d, ok in zip(ids.tolist(), dists.tolist(), passed.tolist()):
            if len(top) < efs or (top and (d, rid) < (-top[0][0], -top[0][1])):
                heapq.heappush(shared, (d, rid))
                pushed[rid] = True
                if len(top) >= efs:
                    nd, ni = heapq.heapreplace(top, (-d, -rid))
                    # evicted records are already shared; their flag is never read
                    heapq.heappush(recycle, (-nd, -ni, False))
                else:
                    heapq.heappush(top, (-d, -rid))
                if ok:
                    heapq.heappush(results, (d, rid))
            else:
                heapq.heappush(recycle, (d, rid, ok))

    def expand_search(self) -> None:
        """Widen ``efs`` and refill ``top`` from the recycle queue."""
        self.efs += self.delta_efs
        top, recycle = self.top, self.recycle
        while recycle and len(top) < self.efs:
            d, rid, ok = heapq.heappop(recycle)
            heapq.heappush(top, (-d, -rid))
            if not self.pushed[rid]:
                heapq.heappush(self.shared, (d, rid))
                self.pushed[rid] = True
                if ok:
                    heapq.heappush(self.results, (d, rid))

    # -- expansion policies --

    def one_hop_expand(self, node: int, nbrs: np.ndarray | None = None, mask: np.ndarray | None = None) -> None:
        """Visit every unvisited neighbour, passing or not."""
        if nbrs is None:
            nbrs = self.graph.neighbors(node)
            mask = self.passes(nbrs)
        fresh = ~self.visited[nbrs]
        if fresh.any():
            self._visit_batch(nbrs[fresh], mask[fresh])
        self.counters.one_hop += 1

    def two_hop_expand(self, node: int, nbrs: np.ndarray | None = None, mask: np.ndarray | None = None) -> None:
        """Visit passing one-hop neighbours, then up to ``2M`` passing two-hop ones."""
        graph = self.graph
        if nbrs is None:
            nbrs = graph.neighbors(node)
            mask = self.passes(nbrs)
        sel = mask & ~self.visited[nbrs]
        if sel.any():
            ids = nbrs[sel]
            self._visit_batch(ids, np.ones(ids.shape[0], dtype=bool))
        budget = self.two_hop_cap
        for hop in nbrs.tolist():
            if budget <= 0:
                break
            second = graph.neighbors(hop)
            second = second[~self.visited[second]]
            if second.size == 0:
                continue
            second = second[self.passes(second)]
            if second.size == 0:
                continue
            # a record may appear twice in one adjacency list only via
            # distinct hops, which the visited bitmap already filters
            second = second[:budget]
            self._visit_batch(second, np.ones(second.shape[0], dtype=bool))
            budget -= second.shape[0]
        self.counters.two_hop += 1

    # -- iterator --

    def next_filtered(self) -> tuple[list[ScoredRecord], float]:
        """One progressive step: widen, traverse until the width is reached, emit <= k."""
        self.expand_search()
        shared = self.shared
        graph = self.graph
        sel = self.sel if shared else 0.0
        while shared:
            d, c = heapq.heappop(shared)
            if len(self.top) >= self.efs and (d, c) > self._top_max():
                # not expanded; leave it for a wider step
                heapq.heappush(shared, (d, c))
                break
            nbrs = graph.neighbors(c)
            if nbrs.size == 0:
                sel = 0.0
            else:
                mask = self.passes(nbrs)
                sel = float(mask.sum()) / nbrs.size
            if sel >= self.alpha:
                self.one_hop_expand(c, nbrs, mask)
            elif sel >= self.beta:
                self.two_hop_expand(c, nbrs, mask)
            else:
                self.counters.low_sel_breaks += 1
                break
        self.sel = sel
        batch = []
        results = self.results
        while results and len(batch) < self.k:
            d, rid = heapq.heappop(results)
            batch.append(ScoredRecord(rid, d))
        return batch, sel


class CandidateHeap:
    """Array-backed min-heap of ``(dist, id)`` shared by the compiled iterators."""

    def __init__(self, capacity: int) -> None:
        self.d = np.empty(capacity, dtype=np.float64)
        self.i = np.empty(capacity, dtype=np.int64)
        self.p = np.zeros(capacity, dtype=np.int8)
        self.n = np.zeros(1, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.n[0])

    def push(self, d: float, rid: int) -> None:
        self.n[0] = _kernels.heap_push(self.d, self.i, self.p, self.n[0], d, rid, 0)

    def pop(self) -> tuple[float, int]:
        if not self.n[0]:
            raise IndexError("pop from an empty heap")
        item = (float(self.d[0]), int(self.i[0]))
        self.n[0] = _kernels.heap_pop(self.d, self.i, self.p, self.n[0])
        return item

    def items(self) -> list[tuple[float, int]]:
        m = len(self)
        return sorted(zip(self.d[:m].tolist(), self.i[:m].tolist()))


class CompiledGraphSearchState:
    """Same iterator as :class:`GraphSearchState` with the traversal step compiled.

    Queues are array heaps; ``shared`` must be a :class:`CandidateHeap`.
    """

    def __init__(
        self,
        graph: GraphIndex,
        q: np.ndarray,
        p: Predicate,
        shared: CandidateHeap,
        visited: np.ndarray,
        attributes: np.ndarray | None = None,
        *,
        k: int = 10,
        alpha: float = 0.3,
        beta: float = 0.05,
        delta_efs: int | None = None,
        counters: SearchCounters | None = None,
    ) -> None:
        if not isinstance(p, AlwaysTrue) and attributes is None:
            raise ValueError("a filtering predicate needs the attribute table")
        n = graph.n
        layer = graph.layers[0]
        self.graph = graph
        self.vectors = graph.vectors
        self.q = np.ascontiguousarray(q, dtype=np.float64)
        self.p = p
        self.attributes = attributes if attributes is not None else np.zeros((n, 1))
        self.shared = shared
        self.visited = visited
        self.k = k
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.delta_efs = delta_efs if delta_efs is not None else k
        self.counters = counters if counters is not None else SearchCounters()
        self.two_hop_cap = 2 * graph.M
        self._trivial = isinstance(p, AlwaysTrue)
        self._program = predicate_program(p)
        self._offsets = layer.offsets
        self._nbrs = layer.neighbors
        self.pushed = np.zeros(n, dtype=bool)
        self.sizes = np.zeros(3, dtype=np.int64)
        self._efs = np.zeros(1, dtype=np.int64)
        self._sel = np.zeros(1, dtype=np.float64)
        self._cnt = np.zeros(_kernels.N_COUNTERS, dtype=np.int64)
        self._heaps = tuple(
            arr
            for _ in range(3)
            for arr in (np.empty(n, dtype=np.float64), np.empty(n, dtype=np.int64), np.zeros(n, dtype=np.int8))
        )
        self._out_d = np.empty(k, dtype=np.float64)
        self._out_i = np.empty(k, dtype=np.int64)

    @property
    def efs(self) -> int:
        return int(self._efs[0])

    @efs.setter
    def efs(self, value: int) -> None:
        self._efs[0] = value

    @property
    def sel(self) -> float:
        return float(self._sel[0])

    @property
    def exhausted(self) -> bool:
        return not len(self.shared) and not self.sizes[1] and not self.sizes[2]

    def top_items(self) -> list[tuple[float, int]]:
        m = int(self.sizes[0])
        td, ti = self._heaps[0], self._heaps[1]
        return sorted(zip((-td[:m]).tolist(), (-ti[:m]).tolist()))

    def passes(self, ids: np.ndarray) -> np.ndarray:
        if self._trivial:
            return np.ones(ids.shape[0], dtype=bool)
        self.counters.predicate_evals += ids.shape[0]
        return _kernels.program_mask(*self._program, self.attributes, np.asarray(ids, dtype=np.int64))

    def _flush(self) -> None:
        c, cnt = self.counters, self._cnt
        c.dist_comps += int(cnt[_kernels.C_DIST])
        c.predicate_evals += int(cnt[_kernels.C_EVAL])
        c.one_hop += int(cnt[_kernels.C_ONE])
        c.two_hop += int(cnt[_kernels.C_TWO])
        c.low_sel_breaks += int(cnt[_kernels.C_BREAK])
        cnt[:] = 0

    def maintain_queues(self, record_id: int, passed: bool) -> None:
        if self.visited[record_id]:
            raise ValueError(f"record {record_id} already visited")
        sh = self.shared
        _kernels.visit(
            record_id, passed, self.vectors, self.q, self.visited, self.pushed, self.sizes,
            sh.n, self._efs, self._cnt, sh.d, sh.i, sh.p, *self._heaps,
        )
        self._flush()

    def next_filtered(self) -> tuple[list[ScoredRecord], float]:
        sh = self.shared
        cnt = _kernels.next_filtered(
            self.vectors, self.q, self.attributes, self._offsets, self._nbrs,
            *self._program, self._trivial,
            self.visited, self.pushed, self.sizes, sh.n, self._efs, self._sel, self._cnt,
            sh.d, sh.i, sh.p, *self._heaps,
            self.k, self.delta_efs, self.alpha, self.beta, self.two_hop_cap,
            self._out_d, self._out_i,
        )
        self._flush()
        batch = [ScoredRecord(i, d) for i, d in zip(self._out_i[:cnt].tolist(), self._out_d[:cnt].tolist())]
        return batch, self.sel


def graph_open(
    graph: GraphIndex,
    q: np.ndarray,
    p: Predicate,
    shared_candidates: list | CandidateHeap,
    visited: np.ndarray,
    attributes: np.ndarray | None = None,
    **kwargs,
) -> GraphSearchState | CompiledGraphSearchState:
    """Create the traversal state and visit the routed entry point.

    A :class:`CandidateHeap` selects the compiled iterator, a plain list the
    ``heapq`` one; both make identical decisions.
    """
    cls = CompiledGraphSearchState if isinstance(shared_candidates, CandidateHeap) else GraphSearchState
    state = cls(graph, q, p, shared_candidates, visited, attributes, **kwargs)
    counter = [0]
    entry = select_entry_point(graph, state.q, counter)
    state.counters.routing_comps += counter[0]
    if not visited[entry]:
        passed = bool(state.passes(np.array([entry]))[0])
        # efs is still 0 here; admit the entry into top as the seed
        state.efs = 1
        state.maintain_queues(entry, passed)
        state.efs = 0
    return state


def neighborhood_passrate(graph: GraphIndex, node: int, p: Predicate, attributes: np.ndarray | None) -> float:
    nbrs = graph.neighbors(node)
    if nbrs.size == 0:
        return 0.0
    if isinstance(p, AlwaysTrue):
        return 1.0
    return float(p.mask(attributes[nbrs]).sum()) / nbrs.size
