"""Compiled shortest-path kernels on CSR adjacency arrays."""
import heapq

import numpy as np
from numba import njit


@njit(cache=True)
def dijkstra_kernel(n, out_ptr, out_arcs, head, costs, source):
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, np.int64)
    done = np.zeros(n, np.bool_)
    dist[source] = 0.0
    heap = [(0.0, np.int64(source))]
    while len(heap) > 0:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k in range(out_ptr[u], out_ptr[u + 1]):
            a = out_arcs[k]
            v = head[a]
            if done[v]:
                continue
            nd = d + costs[a]
            if nd < dist[v] or (nd == dist[v] and a < pred[v]):
                dist[v] = nd
                pred[v] = a
                heapq.heappush(heap, (nd, v))
    return dist, pred


@njit(cache=True)
def bellman_ford_kernel(n, tail, head, costs, source, abs_tol):
    """Returns (dist, pred, witness).

    source < 0 starts every vertex at distance 0 (global cycle search).
    witness >= 0 is a vertex whose predecessor walk reaches a negative cycle.
    Improvements below abs_tol are ignored, so cycles costing more than
    -abs_tol count as nonnegative.
    """
    m = len(tail)
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, np.int64)
    if source < 0:
        dist[:] = 0.0
    else:
        dist[source] = 0.0
    witness = -1
    for it in range(n + 1):
        changed = -1
        for a in range(m):
            u = tail[a]
            du = dist[u]
            if du == np.inf:
                continue
            v = head[a]
            nd = du + costs[a]
            if nd < dist[v] - abs_tol - 1e-12 * abs(nd):
                dist[v] = nd
                pred[v] = a
                changed = v
        if changed < 0:
            return dist, pred, -1
        witness = changed
    return dist, pred, witness


@njit(cache=True)
def extract_cycle(n, tail, pred, witness):
    x = witness
    for _ in range(n):
        x = tail[pred[x]]
    cycle = []
    v = x
    while True:
        a = pred[v]
        cycle.append(a)
        v = tail[a]
        if v == x:
            break
    out = np.empty(len(cycle), np.int64)
    for i in range(len(cycle)):
        out[i] = cycle[len(cycle) - 1 - i]
    return out


@njit(cache=True)
def trace_path(tail, pred, source, target):
    """Arc ids from source to target along predecessor arcs (empty if unreachable)."""
    arcs = []
    v = target
    steps = 0
    while v != source:
        a = pred[v]
        if a < 0 or steps > len(pred):
            return np.empty(0, np.int64)
        arcs.append(a)
        v = tail[a]
        steps += 1
    out = np.empty(len(arcs), np.int64)
    for i in range(len(arcs)):
        out[i] = arcs[len(arcs) - 1 - i]
    return out
