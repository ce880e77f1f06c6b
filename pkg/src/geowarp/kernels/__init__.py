"""Hot loop-bound kernels: all-pairs Dijkstra and exact assignment.

Both have a numba ``@njit`` implementation and a pure numpy/stdlib fallback.
Selection happens at import time: the fallback is used when numba is
unavailable or when the environment variable ``GEOWARP_DISABLE_NUMBA`` is
set to a non-empty value other than ``0``. Both paths produce identical
results; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_impl


def _numba_disabled() -> bool:
    flag = os.environ.get("GEOWARP_DISABLE_NUMBA", "")
    return flag not in ("", "0")


USING_NUMBA = False
_impl = numpy_impl
if not _numba_disabled():
    try:
        from . import numba_impl as _numba_impl

        _impl = _numba_impl
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        pass


def dijkstra_all_pairs(
    indptr: np.ndarray, indices: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """All-pairs shortest path distances on a CSR graph.

    Runs one binary-heap Dijkstra per source. Unreachable pairs come back
    as ``inf``.
    """
    n = indptr.shape[0] - 1
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("edge weights must be non-negative")
    return _impl.dijkstra_all_pairs(n, indptr, indices, weights)


def dijkstra_single(
    indptr: np.ndarray, indices: np.ndarray, weights: np.ndarray, source: int
) -> np.ndarray:
    """Shortest-path distances from one source on a CSR graph."""
    n = indptr.shape[0] - 1
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return _impl.dijkstra_single(n, indptr, indices, weights, int(source))


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact minimum-cost bijection of a square cost matrix.

    Shortest-augmenting-path method with dual potentials, O(n^3). Returns
    ``(col_of_row, total_cost)``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    col_of_row = _impl.solve_assignment(cost)
    total = float(cost[np.arange(cost.shape[0]), col_of_row].sum())
    return col_of_row, total
