"""Pullback metrics, volume elements, and log-volume gradients.

The metric at x is J^T J where J is the Jacobian of an encoder map (plain
or warped) evaluated at x; the volume element is the product of the top d
singular values of J, d being the intrinsic dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateJacobianError, ShapeError

_DEGENERATE_SV = 1e-12


@dataclass
class MetricTensor:
    """Symmetric PSD bilinear form at a base point."""

    g: np.ndarray
    base_point: np.ndarray
    kind: str = "on_manifold"

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.base_point = np.asarray(self.base_point, dtype=np.float64)
        if self.g.ndim != 2 or self.g.shape[0] != self.g.shape[1]:
            raise ShapeError("metric must be a square matrix")
        if np.max(np.abs(self.g - self.g.T)) > 1e-12:
            raise ContractError("metric is not symmetric within 1e-12")
        self.g = 0.5 * (self.g + self.g.T)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.g)


def pullback_metric(encoder_map, x: np.ndarray, kind: str = "on_manifold") -> MetricTensor:
    """J^T J of the encoder map at x (eval-mode map required)."""
    x = np.asarray(x, dtype=np.float64)
    jac = encoder_map.jacobian(x)
    return MetricTensor(jac.T @ jac, x, kind)


def metric_inner(metric: MetricTensor, X: np.ndarray, Y: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = metric.g.shape[0]
    if X.shape != (n,) or Y.shape != (n,):
        raise ShapeError(f"tangent vectors must have shape ({n},)")
    return float(X @ metric.g @ Y)


def volume_element(encoder_map, x: np.ndarray, d: int) -> float:
    """Product of the d largest singular values of the Jacobian at x.

    Returns 0.0 when the d-th singular value collapses (rank-deficient
    Jacobian), which callers treat as a degenerate-volume flag.
    """
    return float(volume_element_batch(encoder_map, np.asarray(x, dtype=np.float64)[None, :], d)[0])


def volume_element_batch(encoder_map, x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    latent = encoder_map.latent_dim
    if not 1 <= d <= min(latent, encoder_map.ambient_dim):
        raise ContractError(
            f"intrinsic dimension d={d} must be in [1, {min(latent, encoder_map.ambient_dim)}]"
        )
    jac = encoder_map.jacobian_batch(x)
    return _volume_from_jacobians(jac, d)


def _volume_from_jacobians(jac: np.ndarray, d: int) -> np.ndarray:
    rows = jac.shape[1]
    if d == rows and d <= 3:
        # product of all singular values = sqrt(det(J J^T)); the Gram
        # determinant avoids a LAPACK round trip on the sampling hot path
        gram = np.einsum("nik,njk->nij", jac, jac)
        det = np.linalg.det(gram)
        vol = np.sqrt(np.maximum(det, 0.0))
        vol[vol < _DEGENERATE_SV ** d] = 0.0
        return vol
    sv = np.linalg.svd(jac, compute_uv=False)
    vol = np.prod(sv[:, :d], axis=1)
    vol[sv[:, d - 1] < _DEGENERATE_SV] = 0.0
    return vol


def log_volume_gradient(encoder_map, x: np.ndarray, d: int) -> np.ndarray:
    """Central finite differences of log volume_element at x."""
    return log_volume_gradient_batch(encoder_map, np.asarray(x, dtype=np.float64)[None, :], d)[0]


def log_volume_gradient_batch(encoder_map, x: np.ndarray, d: int) -> np.ndarray:
    """Per-point gradient of log volume; step h = 1e-4 (1 + |x|).

    All 2 * dim stencil shifts are stacked into a single volume-element
    batch so the underlying Jacobian sweep runs as a few large matmuls.
    """
    x = np.asarray(x, dtype=np.float64)
    n, dim = x.shape
    h = 1e-4 * (1.0 + np.linalg.norm(x, axis=1))
    stencil = np.empty((2 * dim, n, dim))
    for j in range(dim):
        stencil[2 * j] = x
        stencil[2 * j, :, j] += h
        stencil[2 * j + 1] = x
        stencil[2 * j + 1, :, j] -= h
    vol = volume_element_batch(encoder_map, stencil.reshape(2 * dim * n, dim), d)
    vol = vol.reshape(2 * dim, n)
    if np.any(vol <= _DEGENERATE_SV):
        raise DegenerateJacobianError(
            "volume element degenerate inside finite-difference stencil"
        )
    logs = np.log(vol)
    return ((logs[0::2] - logs[1::2]) / (2.0 * h)).T.copy()


def export_metric_csv(encoder_map, points: np.ndarray, d: int, path: str | Path) -> None:
    """Batch export: point coordinates, flattened metric, volume element."""
    points = np.asarray(points, dtype=np.float64)
    jac = encoder_map.jacobian_batch(points)
    dim = points.shape[1]
    header = (
        [f"x{i}" for i in range(dim)]
        + [f"g{i}{j}" for i in range(dim) for j in range(dim)]
        + ["volume_element"]
    )
    vol = _volume_from_jacobians(jac, d)
    gram = np.einsum("nki,nkj->nij", jac, jac)
    rows = np.hstack([points, gram.reshape(points.shape[0], -1), vol[:, None]])
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
