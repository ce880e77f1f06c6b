"""Numba ``@njit`` kernel implementations (default path)."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _heap_push(heap_d, heap_v, size, d, v):
    i = size
    heap_d[i] = d
    heap_v[i] = v
    while i > 0:
        parent = (i - 1) // 2
        if heap_d[parent] <= heap_d[i]:
            break
        heap_d[parent], heap_d[i] = heap_d[i], heap_d[parent]
        heap_v[parent], heap_v[i] = heap_v[i], heap_v[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(heap_d, heap_v, size):
    d = heap_d[0]
    v = heap_v[0]
    size -= 1
    heap_d[0] = heap_d[size]
    heap_v[0] = heap_v[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and heap_d[left] < heap_d[smallest]:
            smallest = left
        if right < size and heap_d[right] < heap_d[smallest]:
            smallest = right
        if smallest == i:
            break
        heap_d[smallest], heap_d[i] = heap_d[i], heap_d[smallest]
        heap_v[smallest], heap_v[i] = heap_v[i], heap_v[smallest]
        i = smallest
    return d, v, size


@njit(cache=True)
def _dijkstra_into(n, indptr, indices, weights, source, dist, heap_d, heap_v):
    for i in range(n):
        dist[i] = np.inf
    dist[source] = 0.0
    size = _heap_push(heap_d, heap_v, 0, 0.0, source)
    while size > 0:
        d, u, size = _heap_pop(heap_d, heap_v, size)
        if d > dist[u]:
            continue
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            nd = d + weights[e]
            if nd < dist[v]:
                dist[v] = nd
                size = _heap_push(heap_d, heap_v, size, nd, v)
    return dist


@njit(cache=True)
def dijkstra_single(n, indptr, indices, weights, source):
    # Each edge relaxes at most once after its tail is settled, so the heap
    # never holds more than E + 1 entries.
    cap = indices.shape[0] + 2
    heap_d = np.empty(cap)
    heap_v = np.empty(cap, dtype=np.int64)
    dist = np.empty(n)
    _dijkstra_into(n, indptr, indices, weights, source, dist, heap_d, heap_v)
    return dist


@njit(cache=True)
def dijkstra_all_pairs(n, indptr, indices, weights):
    cap = indices.shape[0] + 2
    heap_d = np.empty(cap)
    heap_v = np.empty(cap, dtype=np.int64)
    out = np.empty((n, n))
    for s in range(n):
        _dijkstra_into(n, indptr, indices, weights, s, out[s], heap_d, heap_v)
    return out


@njit(cache=True)
def solve_assignment(cost):
    """Shortest augmenting path assignment with dual potentials."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 0 = unassigned
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = np.inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row
