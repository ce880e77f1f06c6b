"""Embedding, geodesic, and generation-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, UndefinedCorrelationError
from .manifolds import DistanceMatrix, PointCloud, analytic_volume_element


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two equal-length vectors")
    da = a - a.mean()
    db = b - b.mean()
    na = np.linalg.norm(da)
    nb = np.linalg.norm(db)
    if na < 1e-300 or nb < 1e-300:
        raise UndefinedCorrelationError("zero-variance vector in correlation")
    return float(da @ db / (na * nb))


def latent_pair_distances(encoder_map, points: np.ndarray) -> np.ndarray:
    """Condensed (i < j) Euclidean distances between encoded points."""
    z = encoder_map.encode(np.asarray(points, dtype=np.float64))
    iu, ju = np.triu_indices(z.shape[0], k=1)
    return np.linalg.norm(z[iu] - z[ju], axis=1)


def demap(encoder_map, cloud: PointCloud, ground_truth: DistanceMatrix) -> float:
    """Pearson correlation between latent pairwise distances and ground-truth
    manifold distances, over all i < j pairs."""
    if cloud.n < 3:
        raise InsufficientDataError("need at least 3 points")
    if ground_truth.n != cloud.n:
        raise ValueError("distance matrix does not align with the cloud")
    return pearson(latent_pair_distances(encoder_map, cloud.points),
                   ground_truth.condensed())


def geodesic_length_mse(predicted, oracle) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    oracle = np.asarray(oracle, dtype=np.float64)
    if predicted.shape != oracle.shape or predicted.ndim != 1 or predicted.size < 1:
        raise ValueError("length lists must be equal-length 1-D with k >= 1")
    return float(np.mean((predicted - oracle) ** 2))


@dataclass
class KdeEstimate:
    """Gaussian-kernel density values at query points.

    ``bandwidth`` is the Scott factor n^(-1/6) for 2-D data; the kernel
    width on each axis is that factor times the per-axis sample deviation.
    ``mask`` is True where a query lies inside the evaluation region.
    """

    densities: np.ndarray
    bandwidth: float
    mask: np.ndarray


def kde_density(samples: np.ndarray, queries: np.ndarray, mask_region=None) -> KdeEstimate:
    """2-D product-kernel KDE with Scott's-rule bandwidth per axis."""
    samples = np.asarray(samples, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError("samples must be (n, 2)")
    n = samples.shape[0]
    if n < 10:
        raise InsufficientDataError(f"need at least 10 samples, got {n}")
    factor = n ** (-1.0 / 6.0)
    sigma = samples.std(axis=0, ddof=1)
    sigma = np.where(sigma < 1e-12, 1.0, sigma)
    h = factor * sigma
    diff = (queries[:, None, :] - samples[None, :, :]) / h
    kern = np.exp(-0.5 * (diff**2).sum(axis=2))
    dens = kern.sum(axis=1) / (n * 2.0 * np.pi * h[0] * h[1])
    if mask_region is None:
        mask = np.ones(queries.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask_region(queries), dtype=bool)
    return KdeEstimate(densities=dens, bandwidth=float(factor), mask=mask)


def evaluation_mask(kind: str):
    """Boundary mask keeping KDE and volume-element evaluation stable:
    u^2 + v^2 < 0.8 on the hemisphere, |u|, |v| < 1.6 on saddle and
    paraboloid, everything elsewhere."""
    if kind == "hemisphere":
        return lambda uv: uv[:, 0] ** 2 + uv[:, 1] ** 2 < 0.8
    if kind in ("saddle", "paraboloid"):
        return lambda uv: (np.abs(uv[:, 0]) < 1.6) & (np.abs(uv[:, 1]) < 1.6)
    return lambda uv: np.ones(uv.shape[0], dtype=bool)


def recover_parameters(cloud: PointCloud) -> np.ndarray:
    """(u, v) for a generated cloud: undo any stored rotation, then read the
    first two ambient coordinates."""
    pts = cloud.unrotated()
    return pts[:, :2]


def density_volume_correlation(generated: PointCloud, kind: str) -> tuple[float, float]:
    """Pearson R (and R^2) between the KDE density of generated points in
    parameter space and the analytic volume element, inside the mask."""
    uv = recover_parameters(generated)
    est = kde_density(uv, uv, mask_region=evaluation_mask(kind))
    keep = est.mask
    if int(keep.sum()) < 10:
        raise InsufficientDataError(
            f"only {int(keep.sum())} unmasked points; need at least 10"
        )
    vol = analytic_volume_element(kind, uv[keep, 0], uv[keep, 1])
    r = pearson(est.densities[keep], vol)
    return r, r * r
