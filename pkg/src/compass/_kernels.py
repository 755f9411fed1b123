"""Compiled inner loops for query time: distances, predicate programs, array heaps
and one progressive step of the filtered graph traversal.

Heaps are parallel arrays ``(key, id, payload)`` ordered by ``(key, id)``; a max
heap stores negated keys and ids, exactly like the ``heapq`` reference code.
"""

from __future__ import annotations

import numba as nb
import numpy as np

OP_TRUE, OP_RANGE, OP_AND, OP_OR = 0, 1, 2, 3

# counter slots
C_DIST, C_EVAL, C_ONE, C_TWO, C_BREAK = 0, 1, 2, 3, 4
N_COUNTERS = 5

# heap slots in the ``sizes`` array; the shared queue keeps its own size
H_TOP, H_RECYCLE, H_RESULTS = 0, 1, 2


@nb.njit(cache=True)
def sq_dists(vectors, ids, q):
    out = np.empty(ids.shape[0], dtype=np.float64)
    d = q.shape[0]
    for t in range(ids.shape[0]):
        row = ids[t]
        s = 0.0
        for j in range(d):
            x = vectors[row, j] - q[j]
            s += x * x
        out[t] = s
    return out


@nb.njit(cache=True, inline="always")
def _dist(vectors, row, q):
    s = 0.0
    for j in range(q.shape[0]):
        x = vectors[row, j] - q[j]
        s += x * x
    return s


# --- predicate programs --------------------------------------------------------


@nb.njit(cache=True)
def eval_program(ops, arg, lo, hi, attrs, row, stack):
    sp = 0
    for t in range(ops.shape[0]):
        op = ops[t]
        if op == OP_RANGE:
            v = attrs[row, arg[t]]
            stack[sp] = v >= lo[t] and v <= hi[t]
            sp += 1
        elif op == OP_TRUE:
            stack[sp] = True
            sp += 1
        else:
            n = arg[t]
            acc = stack[sp - 1]
            for j in range(2, n + 1):
                if op == OP_AND:
                    acc = acc and stack[sp - j]
                else:
                    acc = acc or stack[sp - j]
            sp -= n
            stack[sp] = acc
            sp += 1
    return stack[0]


@nb.njit(cache=True)
def program_mask(ops, arg, lo, hi, attrs, ids):
    stack = np.empty(ops.shape[0] + 1, dtype=np.bool_)
    out = np.empty(ids.shape[0], dtype=np.bool_)
    for t in range(ids.shape[0]):
        out[t] = eval_program(ops, arg, lo, hi, attrs, ids[t], stack)
    return out


# --- array heaps ---------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _lt(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@nb.njit(cache=True)
def heap_push(hd, hi, hp, n, d, i, pl):
    pos = n
    while pos > 0:
        parent = (pos - 1) >> 1
        if _lt(d, i, hd[parent], hi[parent]):
            hd[pos] = hd[parent]
            hi[pos] = hi[parent]
            hp[pos] = hp[parent]
            pos = parent
        else:
            break
    hd[pos] = d
    hi[pos] = i
    hp[pos] = pl
    return n + 1


@nb.njit(cache=True)
def _sift_down(hd, hi, hp, n, d, i, pl):
    pos = 0
    while True:
        c = 2 * pos + 1
        if c >= n:
            break
        if c + 1 < n and _lt(hd[c + 1], hi[c + 1], hd[c], hi[c]):
            c += 1
        if _lt(hd[c], hi[c], d, i):
            hd[pos] = hd[c]
            hi[pos] = hi[c]
            hp[pos] = hp[c]
            pos = c
        else:
            break
    hd[pos] = d
    hi[pos] = i
    hp[pos] = pl


@nb.njit(cache=True)
def heap_pop(hd, hi, hp, n):
    """Remove the root (read it first); returns the new size."""
    n -= 1
    if n > 0:
        _sift_down(hd, hi, hp, n, hd[n], hi[n], hp[n])
    return n


@nb.njit(cache=True)
def heap_replace(hd, hi, hp, n, d, i, pl):
    _sift_down(hd, hi, hp, n, d, i, pl)


# --- graph traversal step ------------------------------------------------------


@nb.njit(cache=True)
def visit(rid, ok, vectors, q, visited, pushed, sizes, sh_n, efs_arr, counters,
          sd, si, sp, td, ti, tp, rd, ri, rp, qd, qi, qp):
    """Compute one distance and file the record into the traversal queues."""
    visited[rid] = True
    d = _dist(vectors, rid, q)
    counters[C_DIST] += 1
    efs = efs_arr[0]
    nt = sizes[H_TOP]
    if nt < efs or (nt > 0 and _lt(d, rid, -td[0], -ti[0])):
        sh_n[0] = heap_push(sd, si, sp, sh_n[0], d, rid, 0)
        pushed[rid] = True
        if nt >= efs:
            ed = -td[0]
            ei = -ti[0]
            heap_replace(td, ti, tp, nt, -d, -rid, 0)
            # evicted records are already shared; their flag is never read
            sizes[H_RECYCLE] = heap_push(rd, ri, rp, sizes[H_RECYCLE], ed, ei, 0)
        else:
            sizes[H_TOP] = heap_push(td, ti, tp, nt, -d, -rid, 0)
        if ok:
            sizes[H_RESULTS] = heap_push(qd, qi, qp, sizes[H_RESULTS], d, rid, 0)
    else:
        sizes[H_RECYCLE] = heap_push(rd, ri, rp, sizes[H_RECYCLE], d, rid, 1 if ok else 0)


@nb.njit(cache=True)
def next_filtered(
    vectors, q, attrs, offsets, nbrs,
    ops, arg, lo, hi, trivial,
    visited, pushed, sizes, sh_n, efs_arr, sel_arr, counters,
    sd, si, sp, td, ti, tp, rd, ri, rp, qd, qi, qp,
    k, delta_efs, alpha, beta, two_hop_cap,
    out_d, out_i,
):
    """Widen, traverse until the width is reached, emit up to ``k`` results.

    Returns the number of emitted records; the step's sel lands in ``sel_arr``.
    """
    stack = np.empty(ops.shape[0] + 1, dtype=np.bool_)
    # expand_search
    efs_arr[0] += delta_efs
    efs = efs_arr[0]
    while sizes[H_RECYCLE] > 0 and sizes[H_TOP] < efs:
        d = rd[0]
        rid = ri[0]
        ok = rp[0]
        sizes[H_RECYCLE] = heap_pop(rd, ri, rp, sizes[H_RECYCLE])
        sizes[H_TOP] = heap_push(td, ti, tp, sizes[H_TOP], -d, -rid, 0)
        if not pushed[rid]:
            sh_n[0] = heap_push(sd, si, sp, sh_n[0], d, rid, 0)
            pushed[rid] = True
            if ok:
                sizes[H_RESULTS] = heap_push(qd, qi, qp, sizes[H_RESULTS], d, rid, 0)

    sel = sel_arr[0] if sh_n[0] > 0 else 0.0
    mask = np.empty(64, dtype=np.bool_)
    second = np.empty(64, dtype=np.int64)
    while sh_n[0] > 0:
        d = sd[0]
        c = si[0]
        sh_n[0] = heap_pop(sd, si, sp, sh_n[0])
        if sizes[H_TOP] >= efs and _lt(-td[0], -ti[0], d, c):
            sh_n[0] = heap_push(sd, si, sp, sh_n[0], d, c, 0)
            break
        b = offsets[c]
        e = offsets[c + 1]
        deg = e - b
        if deg > mask.shape[0]:
            mask = np.empty(deg, dtype=np.bool_)
        if deg == 0:
            sel = 0.0
        else:
            npass = 0
            for t in range(deg):
                if trivial:
                    mask[t] = True
                else:
                    mask[t] = eval_program(ops, arg, lo, hi, attrs, nbrs[b + t], stack)
                if mask[t]:
                    npass += 1
            if not trivial:
                counters[C_EVAL] += deg
            sel = npass / deg
        if sel >= alpha:
            for t in range(deg):
                u = nbrs[b + t]
                if not visited[u]:
                    visit(u, mask[t], vectors, q, visited, pushed, sizes, sh_n, efs_arr, counters,
                          sd, si, sp, td, ti, tp, rd, ri, rp, qd, qi, qp)
            counters[C_ONE] += 1
        elif sel >= beta:
            for t in range(deg):
                u = nbrs[b + t]
                if mask[t] and not visited[u]:
                    visit(u, True, vectors, q, visited, pushed, sizes, sh_n, efs_arr, counters,
                          sd, si, sp, td, ti, tp, rd, ri, rp, qd, qi, qp)
            budget = two_hop_cap
            for t in range(deg):
                if budget <= 0:
                    break
                h = nbrs[b + t]
                hb = offsets[h]
                he = offsets[h + 1]
                if he - hb > second.shape[0]:
                    second = np.empty(he - hb, dtype=np.int64)
                m = 0
                for s in range(hb, he):
                    u = nbrs[s]
                    if not visited[u]:
                        second[m] = u
                        m += 1
                if m == 0:
                    continue
                if not trivial:
                    counters[C_EVAL] += m
                taken = 0
                for s in range(m):
                    u = second[s]
                    if trivial or eval_program(ops, arg, lo, hi, attrs, u, stack):
                        if taken < budget:
                            second[taken] = u
                            taken += 1
                for s in range(taken):
                    visit(second[s], True, vectors, q, visited, pushed, sizes, sh_n, efs_arr, counters,
                          sd, si, sp, td, ti, tp, rd, ri, rp, qd, qi, qp)
                budget -= taken
            counters[C_TWO] += 1
        else:
            counters[C_BREAK] += 1
            break
    sel_arr[0] = sel
    cnt = 0
    while sizes[H_RESULTS] > 0 and cnt < k:
        out_d[cnt] = qd[0]
        out_i[cnt] = qi[0]
        cnt += 1
        sizes[H_RESULTS] = heap_pop(qd, qi, qp, sizes[H_RESULTS])
    return cnt
