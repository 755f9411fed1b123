"""Compiled HNSW insertion kernel.

Links for every (node, level) live in one ``links`` table: level 0 of node i
is row i, level l >= 1 is row ``n + upper_row[i] * max_level + (l - 1)``.
Row capacity is 2M; upper levels only use the first M slots.
"""

from __future__ import annotations

import heapq

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _dist(vectors, a, b):
    s = 0.0
    for j in range(vectors.shape[1]):
        t = vectors[a, j] - vectors[b, j]
        s += t * t
    return s


@njit(cache=True, inline="always")
def _row(n, max_level, upper_row, node, level):
    if level == 0:
        return node
    return n + upper_row[node] * max_level + (level - 1)


@njit(cache=True)
def _search_layer(vectors, links, counts, n, max_level, upper_row, q, entry, ef, level, tags, tag):
    d0 = _dist(vectors, q, entry)
    cand = [(d0, entry)]
    top = [(-d0, -entry)]
    tags[entry] = tag
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        if d > -top[0][0]:
            break
        r = _row(n, max_level, upper_row, c, level)
        for t in range(counts[r]):
            e = links[r, t]
            if tags[e] == tag:
                continue
            tags[e] = tag
            de = _dist(vectors, q, e)
            if len(top) < ef or de < -top[0][0]:
                heapq.heappush(cand, (de, e))
                heapq.heappush(top, (-de, -e))
                if len(top) > ef:
                    heapq.heappop(top)
    m = len(top)
    out_d = np.empty(m, np.float64)
    out_i = np.empty(m, np.int64)
    for t in range(m - 1, -1, -1):
        nd, ni = heapq.heappop(top)
        out_d[t] = -nd
        out_i[t] = -ni
    return out_d, out_i


@njit(cache=True)
def _select(vectors, cand_d, cand_i, cap):
    """Neighbour-selection heuristic; keeps everything when the cap is not binding."""
    m = cand_i.shape[0]
    if m <= cap:
        return cand_i.copy()
    out = np.empty(cap, np.int64)
    k = 0
    for t in range(m):
        e = cand_i[t]
        good = True
        for s in range(k):
            if _dist(vectors, e, out[s]) < cand_d[t]:
                good = False
                break
        if good:
            out[k] = e
            k += 1
            if k == cap:
                break
    return out[:k]


@njit(cache=True)
def build_links(vectors, levels, M, efc):
    n = vectors.shape[0]
    cap0 = 2 * M
    max_level = 0
    for i in range(n):
        if levels[i] > max_level:
            max_level = levels[i]
    upper_row = np.full(n, -1, np.int64)
    n_upper = 0
    for i in range(n):
        if levels[i] > 0:
            upper_row[i] = n_upper
            n_upper += 1
    rows = n + n_upper * max(max_level, 1)
    links = np.full((rows, cap0), -1, np.int64)
    counts = np.zeros(rows, np.int64)
    tags = np.zeros(n, np.int64)
    tag = 0

    entry = 0
    top_level = levels[0]
    for i in range(1, n):
        cur = entry
        cur_d = _dist(vectors, i, cur)
        lvl = top_level
        while lvl > levels[i]:
            changed = True
            while changed:
                changed = False
                r = _row(n, max_level, upper_row, cur, lvl)
                for t in range(counts[r]):
                    e = links[r, t]
                    de = _dist(vectors, i, e)
                    if de < cur_d or (de == cur_d and e < cur):
                        cur = e
                        cur_d = de
                        changed = True
            lvl -= 1
        lvl = min(levels[i], top_level)
        while lvl >= 0:
            tag += 1
            cd, ci = _search_layer(
                vectors, links, counts, n, max_level, upper_row, i, cur, efc, lvl, tags, tag
            )
            chosen = _select(vectors, cd, ci, M)
            ri = _row(n, max_level, upper_row, i, lvl)
            for t in range(chosen.shape[0]):
                links[ri, t] = chosen[t]
            counts[ri] = chosen.shape[0]
            cap = cap0 if lvl == 0 else M
            for t in range(chosen.shape[0]):
                s = chosen[t]
                rs = _row(n, max_level, upper_row, s, lvl)
                if counts[rs] < cap:
                    links[rs, counts[rs]] = i
                    counts[rs] += 1
                    continue
                c = counts[rs]
                nd = np.empty(c + 1, np.float64)
                ni = np.empty(c + 1, np.int64)
                for u in range(c):
                    ni[u] = links[rs, u]
                    nd[u] = _dist(vectors, s, ni[u])
                ni[c] = i
                nd[c] = _dist(vectors, s, i)
                # order by (dist, id)
                order = np.argsort(ni, kind="mergesort")
                ni = ni[order]
                nd = nd[order]
                order = np.argsort(nd, kind="mergesort")
                kept = _select(vectors, nd[order], ni[order], cap)
                for u in range(kept.shape[0]):
                    links[rs, u] = kept[u]
                for u in range(kept.shape[0], cap):
                    links[rs, u] = -1
                counts[rs] = kept.shape[0]
            cur = ci[0]
            lvl -= 1
        if levels[i] > top_level:
            top_level = levels[i]
            entry = i
    return links, counts, upper_row, entry, max_level
