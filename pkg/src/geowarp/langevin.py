"""Volume-guided generation with the unadjusted Langevin algorithm.

Chains descend the target lambda * s(x) - log(volume element) with Gaussian
noise sqrt(2 eta) per step, so the stationary law concentrates near the
manifold (small s) with mass proportional to the learned volume element.
Final samples are filtered by s(x) < eps.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .errors import ContractError
from .manifolds import PointCloud, data_diameter
from .pullback import log_volume_gradient_batch


@dataclass
class GenerationConfig:
    """Knobs for volume-guided generation.

    ``eta`` and ``eps`` default from the data when left as None: the step
    size scales with squared data diameter over ambient dimension, and the
    filter threshold is the 90th percentile of s over the data.
    """

    lam: float = 10.0
    eta: float | None = None
    n_steps: int = 2000
    eps: float | None = None
    n_samples: int = 500
    seed: int = 0
    init: str = "from_data"
    collect_last: int = 1  # >1 keeps thinned tail snapshots, stride apart
    collect_stride: int = 100

    def __post_init__(self):
        if self.lam <= 0:
            raise ContractError("lam must be > 0")
        if self.eta is not None and self.eta <= 0:
            raise ContractError("eta must be > 0")
        if self.n_steps < 1:
            raise ContractError("n_steps must be >= 1")
        if self.eps is not None and self.eps <= 0:
            raise ContractError("eps must be > 0")
        if self.init not in ("from_data", "gaussian"):
            raise ContractError("init must be 'from_data' or 'gaussian'")
        if self.collect_last < 1 or self.collect_stride < 1:
            raise ContractError("collect_last and collect_stride must be >= 1")
        if (self.collect_last - 1) * self.collect_stride >= self.n_steps:
            raise ContractError("snapshot window exceeds n_steps")

    def to_dict(self) -> dict:
        return asdict(self)


def langevin_step(
    x: np.ndarray,
    grad_target: np.ndarray,
    eta: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One unadjusted Langevin update: x - eta * grad + sqrt(2 eta) * xi."""
    if eta <= 0:
        raise ContractError("eta must be > 0")
    x = np.asarray(x, dtype=np.float64)
    grad_target = np.asarray(grad_target, dtype=np.float64)
    if not np.all(np.isfinite(grad_target)):
        raise ContractError("non-finite target gradient in Langevin step")
    if noise is None:
        if rng is None:
            raise ContractError("langevin_step needs an rng or explicit noise")
        noise = rng.standard_normal(x.shape)
    return x - eta * grad_target + np.sqrt(2.0 * eta) * noise


def run_ula(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    eta: float,
    n_steps: int,
    rng: np.random.Generator,
    checkpoint_every: int = 0,
    checkpoint_fn: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Run chains of unadjusted Langevin updates; rows evolve independently."""
    x = np.asarray(x0, dtype=np.float64).copy()
    for t in range(n_steps):
        x = langevin_step(x, grad_fn(x), eta, rng=rng)
        if checkpoint_fn is not None and checkpoint_every and (t + 1) % checkpoint_every == 0:
            checkpoint_fn(t + 1, x)
    return x


def default_step_size(data: PointCloud) -> float:
    return 1e-3 * data_diameter(data.points) ** 2 / data.dim


def default_filter_threshold(scorer, data: PointCloud, lam: float, codim: int) -> float:
    """Filter level the stationary chains can actually reach.

    The Gibbs law e^{-lam * s} puts mean lam * s ~ codim / 2 across the
    off-manifold directions (equipartition), independent of how sharply the
    scorer rises, so a data-quantile threshold alone would reject nearly
    every equilibrated sample. The data quantile enters as a baseline and
    1.5 * codim / lam of equilibrium headroom is added on top.
    """
    base = float(np.quantile(scorer.score(data.points), 0.9))
    return base + 1.5 * max(codim, 1) / lam


def generate(
    encoder_map,
    scorer,
    d: int,
    config: GenerationConfig,
    data: PointCloud,
) -> tuple[PointCloud, dict]:
    """Volume-guided sampling on the learned manifold.

    Chains start at data points (or at a data-scaled Gaussian blob around
    the data mean) and follow ULA on lambda * s - log f_vol. Returns the
    filtered samples and diagnostics: acceptance fraction and the mean
    deviation score along the trajectory.
    """
    rng = np.random.default_rng(config.seed)
    eta = config.eta if config.eta is not None else default_step_size(data)
    eps = (
        config.eps
        if config.eps is not None
        else default_filter_threshold(scorer, data, config.lam, data.dim - d)
    )

    if config.init == "from_data":
        rows = rng.integers(0, data.n, size=config.n_samples)
        x0 = data.points[rows].copy()
    else:
        center = data.points.mean(axis=0)
        scale = data.points.std(axis=0)
        x0 = center + rng.standard_normal((config.n_samples, data.dim)) * scale

    # Per-point drift cap at three noise standard deviations per step. The
    # finite-difference volume gradient of a piecewise-linear encoder is
    # spiky near activation boundaries; uncapped spikes eject chains past
    # the scorer's restoring range.
    max_grad_norm = 3.0 * np.sqrt(2.0 / eta)

    def grad_fn(x: np.ndarray) -> np.ndarray:
        g = config.lam * scorer.gradient(x) - log_volume_gradient_batch(
            encoder_map, x, d
        )
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        scale = np.minimum(1.0, max_grad_norm / np.maximum(norms, 1e-300))
        return g * scale

    mean_s: list[tuple[int, float]] = [(0, float(np.mean(scorer.score(x0))))]
    every = max(1, config.n_steps // 50)
    snapshot_steps = {
        config.n_steps - k * config.collect_stride for k in range(config.collect_last)
    }
    snapshots: list[np.ndarray] = []

    def on_step(t: int, x: np.ndarray) -> None:
        if t % every == 0:
            mean_s.append((t, float(np.mean(scorer.score(x)))))
        if t in snapshot_steps:
            snapshots.append(x.copy())

    final = run_ula(
        grad_fn, x0, eta, config.n_steps, rng,
        checkpoint_every=1, checkpoint_fn=on_step,
    )
    if config.n_steps not in snapshot_steps or not snapshots:
        snapshots.append(final)

    collected = np.vstack(snapshots)
    s_final = scorer.score(collected)
    keep = s_final < eps
    acceptance = float(keep.mean())
    diagnostics = {
        "acceptance_fraction": acceptance,
        "mean_s_per_checkpoint": [[int(t), s] for t, s in mean_s],
        "eta": float(eta),
        "eps": float(eps),
        "n_collected": int(collected.shape[0]),
        "low_acceptance_warning": acceptance < 0.1,
        "config": config.to_dict(),
    }
    if not keep.any():
        raise ContractError("no samples passed the deviation filter; raise eps")
    return PointCloud(collected[keep], manifold_kind=data.manifold_kind), diagnostics
