"""Benchmark the numba kernels against the pure numpy/stdlib fallbacks.

Run:
    python benchmarks/bench_kernels.py

The fallback path is the same code selected by GEOWARP_DISABLE_NUMBA=1.
"""

from __future__ import annotations

import time

import numpy as np

from geowarp import manifolds as mf
from geowarp.kernels import numpy_impl

try:
    from geowarp.kernels import numba_impl
except ImportError:
    numba_impl = None


def timeit(fn, repeat: int = 3) -> float:
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_dijkstra(n: int = 1500, k: int = 10) -> None:
    cloud = mf.sample_manifold("hemisphere", n, seed=0)
    indptr, indices, weights = mf.knn_graph(cloud.points, k)
    print(f"\nall-pairs Dijkstra: n={n}, k={k}, edges={indices.shape[0]}")

    t_np = timeit(lambda: numpy_impl.dijkstra_all_pairs(n, indptr, indices, weights), repeat=1)
    print(f"  numpy/heapq : {t_np:8.3f} s")
    if numba_impl is not None:
        numba_impl.dijkstra_all_pairs(n, indptr, indices, weights)  # warm up JIT
        t_nb = timeit(lambda: numba_impl.dijkstra_all_pairs(n, indptr, indices, weights))
        print(f"  numba njit  : {t_nb:8.3f} s   ({t_np / t_nb:.1f}x)")
        a = numpy_impl.dijkstra_all_pairs(n, indptr, indices, weights)
        b = numba_impl.dijkstra_all_pairs(n, indptr, indices, weights)
        print(f"  max |diff|  : {np.max(np.abs(a - b)):.3g}")


def bench_assignment(b: int = 96, instances: int = 50) -> None:
    rng = np.random.default_rng(1)
    costs = [rng.random((b, b)) for _ in range(instances)]
    print(f"\nexact assignment: {instances} instances of {b}x{b}")

    def run(impl):
        return [impl.solve_assignment(c) for c in costs]

    t_np = timeit(lambda: run(numpy_impl), repeat=1)
    print(f"  numpy loops : {t_np:8.3f} s")
    if numba_impl is not None:
        numba_impl.solve_assignment(costs[0])  # warm up JIT
        t_nb = timeit(lambda: run(numba_impl))
        print(f"  numba njit  : {t_nb:8.3f} s   ({t_np / t_nb:.1f}x)")
        same = all(
            np.array_equal(numpy_impl.solve_assignment(c), numba_impl.solve_assignment(c))
            for c in costs[:10]
        )
        print(f"  identical   : {same}")


if __name__ == "__main__":
    if numba_impl is None:
        print("numba unavailable; only the fallback path will run")
    bench_dijkstra()
    bench_assignment()
