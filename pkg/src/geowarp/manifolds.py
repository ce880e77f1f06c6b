"""Synthetic surfaces with analytic oracles, graph distances, and sampling.

Five surfaces embedded in R^3 are supported. Hemisphere, saddle, and
paraboloid are graphs over a 2-D parameter domain with closed-form volume
elements; torus and ellipsoid use the standard angle parameterizations.
Clouds can be zero-padded, randomly rotated into higher ambient dimension,
and perturbed with Gaussian noise. Manifold distances come from shortest
paths on a symmetric k-NN graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    ConnectivityError,
    ContractError,
    DomainError,
    ShapeError,
)

KINDS = ("hemisphere", "saddle", "paraboloid", "torus", "ellipsoid")

TORUS_R = 2.0
TORUS_r = 1.0
ELLIPSOID_AXES = (1.0, 1.0, 0.5)

_FMT = "%.17g"


# ---------------------------------------------------------------------------
# data containers


@dataclass
class PointCloud:
    """N points in ambient dimension D, with optional intrinsic parameters."""

    points: np.ndarray
    params: np.ndarray | None = None
    manifold_kind: str = "none"
    noise_sigma: float = 0.0
    rotation: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ShapeError(f"points must be (N, D) with N >= 1, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("points contain non-finite values")
        if self.params is not None:
            self.params = np.asarray(self.params, dtype=np.float64)
            if self.params.shape != (self.points.shape[0], 2):
                raise ShapeError("params must be (N, 2)")
        if self.rotation is not None:
            self.rotation = np.asarray(self.rotation, dtype=np.float64)
            d = self.points.shape[1]
            if self.rotation.shape != (d, d):
                raise ShapeError("rotation must be (D, D)")
            if np.max(np.abs(self.rotation.T @ self.rotation - np.eye(d))) > 1e-10:
                raise ContractError("rotation is not orthogonal within 1e-10")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def unrotated(self) -> np.ndarray:
        """Points mapped back to the pre-rotation frame."""
        if self.rotation is None:
            return self.points
        return self.points @ self.rotation

    def save(self, path: str | Path) -> None:
        path = Path(path)
        cols = [f"x{i}" for i in range(self.dim)]
        data = self.points
        if self.params is not None:
            cols += ["u", "v"]
            data = np.hstack([self.points, self.params])
        header = ",".join(cols)
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=_FMT)
        meta = {
            "manifold_kind": self.manifold_kind,
            "noise_sigma": self.noise_sigma,
            "rotation": None if self.rotation is None else self.rotation.tolist(),
        }
        _meta_path(path).write_text(json.dumps(meta))

    @classmethod
    def load(cls, path: str | Path) -> "PointCloud":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        has_params = header[-2:] == ["u", "v"]
        d = len(header) - 2 if has_params else len(header)
        points = raw[:, :d]
        params = raw[:, d:] if has_params else None
        kind, sigma, rotation = "none", 0.0, None
        meta_path = _meta_path(path)
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            kind = meta.get("manifold_kind", "none")
            sigma = float(meta.get("noise_sigma", 0.0))
            rot = meta.get("rotation")
            rotation = None if rot is None else np.asarray(rot)
        return cls(points, params, kind, sigma, rotation)


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json") if path.suffix else Path(str(path) + ".meta.json")


@dataclass
class DistanceMatrix:
    """Symmetric nonnegative N x N matrix of manifold distances."""

    d: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        n = self.d.shape[0]
        if self.d.ndim != 2 or self.d.shape != (n, n):
            raise ShapeError("distance matrix must be square")
        if np.max(np.abs(self.d - self.d.T)) > 1e-9:
            raise ContractError("distance matrix is not symmetric")
        if np.any(np.diag(self.d) != 0.0):
            raise ContractError("distance matrix has nonzero diagonal")
        if np.any(self.d < 0.0):
            raise ContractError("distance matrix has negative entries")

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def condensed(self) -> np.ndarray:
        """Upper-triangle (i < j) entries as a flat vector."""
        iu, ju = np.triu_indices(self.n, k=1)
        return self.d[iu, ju]

    def save(self, path: str | Path) -> None:
        np.savetxt(path, self.d, delimiter=",", fmt=_FMT)

    @classmethod
    def load(cls, path: str | Path) -> "DistanceMatrix":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


# ---------------------------------------------------------------------------
# parameterizations and analytic oracles


def _check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise DomainError(f"unknown manifold kind {kind!r}; valid: {', '.join(KINDS)}")
    return kind


def parameterize(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Map parameters (u, v) to surface points in R^3 (vectorized)."""
    _check_kind(kind)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if kind == "hemisphere":
        rsq = u * u + v * v
        if np.any(rsq >= 1.0):
            raise DomainError("hemisphere parameters need u^2 + v^2 < 1")
        z = np.sqrt(1.0 - rsq)
        return np.stack([u, v, z], axis=-1)
    if kind == "saddle":
        return np.stack([u, v, u * u - v * v], axis=-1)
    if kind == "paraboloid":
        return np.stack([u, v, u * u + v * v], axis=-1)
    if kind == "torus":
        w = TORUS_R + TORUS_r * np.cos(v)
        return np.stack([w * np.cos(u), w * np.sin(u), TORUS_r * np.sin(v)], axis=-1)
    a, b, c = ELLIPSOID_AXES
    return np.stack(
        [a * np.sin(v) * np.cos(u), b * np.sin(v) * np.sin(u), c * np.cos(v)],
        axis=-1,
    )


def analytic_volume_element(kind: str, u, v) -> np.ndarray:
    """Closed-form surface volume element sqrt(det J^T J) at (u, v)."""
    _check_kind(kind)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if kind == "hemisphere":
        rsq = u * u + v * v
        if np.any(rsq >= 1.0):
            raise DomainError("hemisphere volume element needs u^2 + v^2 < 1")
        return 1.0 / np.sqrt(1.0 - rsq)
    if kind in ("saddle", "paraboloid"):
        return np.sqrt(1.0 + 4.0 * u * u + 4.0 * v * v)
    if kind == "torus":
        return TORUS_r * np.abs(TORUS_R + TORUS_r * np.cos(v)) + 0.0 * u
    a, b, c = ELLIPSOID_AXES
    sv, cv = np.sin(v), np.cos(v)
    su, cu = np.sin(u), np.cos(u)
    return np.abs(sv) * np.sqrt(
        (b * c * sv * cu) ** 2 + (a * c * sv * su) ** 2 + (a * b * cv) ** 2
    )


def implicit_residual(kind: str, points: np.ndarray) -> np.ndarray:
    """Absolute violation of the surface's implicit equation, per point."""
    _check_kind(kind)
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if kind == "hemisphere":
        res = np.abs(x * x + y * y + z * z - 1.0)
        return np.where(z < -1e-12, np.maximum(res, -z), res)
    if kind == "saddle":
        return np.abs(z - (x * x - y * y))
    if kind == "paraboloid":
        return np.abs(z - (x * x + y * y))
    if kind == "torus":
        ring = np.sqrt(x * x + y * y) - TORUS_R
        return np.abs(ring * ring + z * z - TORUS_r**2)
    a, b, c = ELLIPSOID_AXES
    return np.abs((x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2 - 1.0)


def distance_to_surface(kind: str, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the surface.

    Exact for hemisphere, torus, and spherical ellipsoids; a Gauss-Newton
    projection handles the remaining graph surfaces (accurate near the
    surface, which is where callers use it).
    """
    _check_kind(kind)
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if kind == "hemisphere":
        rho = np.linalg.norm(p, axis=1)
        above = np.abs(rho - 1.0)
        ring = np.hypot(np.hypot(x, y) - 1.0, z)
        out = np.where(z >= 0.0, above, ring)
    elif kind == "torus":
        out = np.abs(np.hypot(np.hypot(x, y) - TORUS_R, z) - TORUS_r)
    elif kind == "ellipsoid" and len(set(ELLIPSOID_AXES)) == 1:
        out = np.abs(np.linalg.norm(p, axis=1) - ELLIPSOID_AXES[0])
    else:
        out = _projected_distance(kind, p)
    return out[0] if single else out


def _projected_distance(kind: str, p: np.ndarray) -> np.ndarray:
    if kind in ("saddle", "paraboloid"):
        uv = p[:, :2].copy()
    else:
        v0 = np.arccos(np.clip(p[:, 2] / (np.linalg.norm(p, axis=1) + 1e-300), -1, 1))
        u0 = np.arctan2(p[:, 1], p[:, 0])
        uv = np.stack([u0, v0], axis=1)
    h = 1e-6
    for _ in range(30):
        surf = parameterize(kind, uv[:, 0], uv[:, 1])
        resid = surf - p
        # finite-difference parameterization Jacobian, (n, 3, 2)
        ju = (parameterize(kind, uv[:, 0] + h, uv[:, 1]) - parameterize(kind, uv[:, 0] - h, uv[:, 1])) / (2 * h)
        jv = (parameterize(kind, uv[:, 0], uv[:, 1] + h) - parameterize(kind, uv[:, 0], uv[:, 1] - h)) / (2 * h)
        jac = np.stack([ju, jv], axis=2)
        g = np.einsum("nij,ni->nj", jac, resid)
        hmat = np.einsum("nij,nik->njk", jac, jac) + 1e-12 * np.eye(2)
        step = np.linalg.solve(hmat, g)
        uv -= step
        if np.max(np.abs(step)) < 1e-12:
            break
    surf = parameterize(kind, uv[:, 0], uv[:, 1])
    return np.linalg.norm(surf - p, axis=1)


def analytic_geodesic_length(kind: str, p0: np.ndarray, p1: np.ndarray) -> float | None:
    """Closed-form geodesic length when available, else None.

    Great-circle arcs cover the hemisphere and the spherical ellipsoid;
    other surfaces fall back to graph distances upstream. Both endpoints
    must satisfy the surface equation within 1e-6.
    """
    _check_kind(kind)
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    res = implicit_residual(kind, np.stack([p0, p1]))
    if np.any(res > 1e-6):
        raise DomainError(f"endpoint off the {kind} surface (residual {res.max():.3g})")
    if np.array_equal(p0, p1):
        return 0.0
    if kind == "hemisphere":
        return float(np.arccos(np.clip(p0 @ p1, -1.0, 1.0)))
    if kind == "ellipsoid" and len(set(ELLIPSOID_AXES)) == 1:
        r = ELLIPSOID_AXES[0]
        return float(r * np.arccos(np.clip(p0 @ p1 / r**2, -1.0, 1.0)))
    return None


# ---------------------------------------------------------------------------
# sampling


@dataclass
class UniformSampler:
    """Uniform parameter sampling over a bounding box."""

    bounds: tuple[tuple[float, float], tuple[float, float]]


@dataclass
class GaussianSampler:
    """Bivariate Gaussian parameter sampling truncated to a bounding box."""

    mean: tuple[float, float] = (1.0, 1.0)
    cov: float | np.ndarray = 2.0
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((-2.0, 2.0), (-2.0, 2.0))


def default_bounds(kind: str) -> tuple[tuple[float, float], tuple[float, float]]:
    _check_kind(kind)
    if kind == "hemisphere":
        return ((-1.0, 1.0), (-1.0, 1.0))
    if kind in ("saddle", "paraboloid"):
        return ((-2.0, 2.0), (-2.0, 2.0))
    if kind == "torus":
        return ((0.0, 2.0 * np.pi), (0.0, 2.0 * np.pi))
    return ((0.0, 2.0 * np.pi), (0.0, np.pi))


def imbalanced_sampler() -> GaussianSampler:
    """The skewed sampler used for the imbalance experiments: a bivariate
    Gaussian centered at (1, 1) with covariance 2 I, range-limited to
    [-2, 2]^2."""
    return GaussianSampler(mean=(1.0, 1.0), cov=2.0, bounds=((-2.0, 2.0), (-2.0, 2.0)))


def _in_domain(kind: str, uv: np.ndarray) -> np.ndarray:
    if kind == "hemisphere":
        return uv[:, 0] ** 2 + uv[:, 1] ** 2 < 1.0
    return np.ones(uv.shape[0], dtype=bool)


def sample_manifold(
    kind: str,
    n: int,
    sampler: UniformSampler | GaussianSampler | None = None,
    seed: int = 0,
) -> PointCloud:
    """Draw n surface points via the parameter-space sampler.

    Draws are rejection-filtered to the sampler bounds intersected with the
    manifold's parameter domain (the open unit disk for the hemisphere).
    """
    _check_kind(kind)
    if n < 1:
        raise ContractError("n must be >= 1")
    if sampler is None:
        sampler = UniformSampler(default_bounds(kind))
    rng = np.random.default_rng(seed)
    lo = np.array([sampler.bounds[0][0], sampler.bounds[1][0]])
    hi = np.array([sampler.bounds[0][1], sampler.bounds[1][1]])
    if np.any(hi <= lo):
        raise DomainError("sampler bounds are empty")

    accepted: list[np.ndarray] = []
    count = 0
    attempts = 0
    while count < n:
        attempts += 1
        if attempts > 2000:
            raise DomainError(
                f"sampler support incompatible with {kind} domain "
                f"(accepted {count}/{n} after {attempts} rounds)"
            )
        m = max(n - count, 64)
        if isinstance(sampler, UniformSampler):
            uv = rng.uniform(lo, hi, size=(m, 2))
        else:
            cov = sampler.cov
            cov = np.eye(2) * cov if np.isscalar(cov) else np.asarray(cov, dtype=np.float64)
            uv = rng.multivariate_normal(np.asarray(sampler.mean, dtype=np.float64), cov, size=m)
            inside_box = np.all((uv >= lo) & (uv <= hi), axis=1)
            uv = uv[inside_box]
        if uv.shape[0] == 0:
            continue
        ok = _in_domain(kind, uv)
        uv = uv[ok]
        if uv.shape[0] == 0:
            continue
        accepted.append(uv)
        count += uv.shape[0]
    uv = np.vstack(accepted)[:n]
    points = parameterize(kind, uv[:, 0], uv[:, 1])
    return PointCloud(points, params=uv, manifold_kind=kind)


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random rotation: QR of a Gaussian matrix with sign
    correction, flipped to determinant +1."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


def perturb(
    cloud: PointCloud,
    noise_sigma: float,
    target_dim: int | None = None,
    seed: int = 0,
    rotate: bool = True,
) -> PointCloud:
    """Zero-pad to target_dim, apply a seeded random rotation, add noise."""
    d = cloud.dim
    target_dim = d if target_dim is None else int(target_dim)
    if target_dim < d:
        raise ShapeError(f"target_dim {target_dim} < ambient dimension {d}")
    rng = np.random.default_rng(seed)
    pts = np.hstack([cloud.points, np.zeros((cloud.n, target_dim - d))])
    rotation = random_rotation(target_dim, rng) if rotate else np.eye(target_dim)
    pts = pts @ rotation.T
    if noise_sigma > 0.0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    return PointCloud(
        pts,
        params=None if cloud.params is None else cloud.params.copy(),
        manifold_kind=cloud.manifold_kind,
        noise_sigma=float(noise_sigma),
        rotation=rotation,
    )


def data_diameter(points: np.ndarray) -> float:
    """Largest pairwise Euclidean distance."""
    pts = np.asarray(points, dtype=np.float64)
    best = 0.0
    step = 512
    for i in range(0, pts.shape[0], step):
        block = pts[i : i + step]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def default_negative_variance(cloud: PointCloud) -> float:
    """Noise variance c sized so negatives cover the off-manifold
    neighborhood: (diameter / 4)^2."""
    return (data_diameter(cloud.points) / 4.0) ** 2


def negative_sample(cloud: PointCloud, c: float | None = None, seed: int = 0) -> PointCloud:
    """One isotropic-Gaussian-noised negative per data point."""
    if c is None:
        c = default_negative_variance(cloud)
    if c <= 0:
        raise ContractError("noise variance c must be > 0")
    rng = np.random.default_rng(seed)
    noisy = cloud.points + rng.normal(0.0, np.sqrt(c), size=cloud.points.shape)
    return PointCloud(noisy, manifold_kind="none")


# ---------------------------------------------------------------------------
# graph distances


def knn_graph(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric k-NN graph in CSR form (indptr, indices, weights)."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 2:
        raise ContractError("k must be >= 2")
    if k >= n:
        raise ContractError(f"k={k} needs at least k+1={k + 1} points, got {n}")
    sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(sq, np.inf)
    nbr = np.argpartition(sq, k, axis=1)[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    # symmetrize: keep an edge if either endpoint selected it
    a = np.minimum(rows, cols)
    b = np.maximum(rows, cols)
    uniq = np.unique(a * n + b)
    a, b = uniq // n, uniq % n
    w = np.sqrt(sq[a, b])
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    wgt = np.concatenate([w, w])
    order = np.lexsort((dst, src))
    src, dst, wgt = src[order], dst[order], wgt[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, dst.astype(np.int64), wgt


def _component_sizes(indptr: np.ndarray, indices: np.ndarray, n: int) -> list[int]:
    seen = np.zeros(n, dtype=bool)
    sizes = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        size = 0
        while stack:
            u = stack.pop()
            size += 1
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        sizes.append(size)
    return sizes


def graph_distances(cloud: PointCloud, k: int = 10) -> DistanceMatrix:
    """All-pairs shortest-path distances on the symmetric k-NN graph."""
    indptr, indices, weights = knn_graph(cloud.points, k)
    sizes = _component_sizes(indptr, indices, cloud.n)
    if len(sizes) > 1:
        raise ConnectivityError(sizes)
    d = kernels.dijkstra_all_pairs(indptr, indices, weights)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d)
