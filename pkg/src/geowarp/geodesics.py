"""On-manifold geodesics as energy-minimizing parametric curves.

A curve between fixed endpoints is a straight line plus a gated network
correction that vanishes at t=0 and t=1, so the endpoints are exact by
construction. Its discrete energy under a (warped) encoder map is the
squared latent displacement summed over a uniform time grid; minimizing the
energy with the deviation coordinate active pushes the curve onto the
manifold while shortening it.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import ContractError, DomainError, OffManifoldEndpointError
from .nn import MlpModel
from .optim import AdamW


def _gate(t: np.ndarray) -> np.ndarray:
    return 1.0 - (2.0 * t - 1.0) ** 2


@dataclass
class Curve:
    """Endpoint-pinned parametric curve with a learnable bump term."""

    x0: np.ndarray
    x1: np.ndarray
    bump: MlpModel
    n_segments: int = 30

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        if self.x0.shape != self.x1.shape or self.x0.ndim != 1:
            raise ContractError("endpoints must be equal-length vectors")
        dim = self.x0.shape[0]
        if self.bump.in_dim != 2 * dim + 1 or self.bump.out_dim != dim:
            raise ContractError(
                f"bump network must map {2 * dim + 1} -> {dim} for these endpoints"
            )
        if self.n_segments < 1:
            raise ContractError("n_segments must be >= 1")

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_segments + 1)

    def _bump_input(self, t: np.ndarray) -> np.ndarray:
        m = t.shape[0]
        return np.hstack(
            [np.tile(self.x0, (m, 1)), np.tile(self.x1, (m, 1)), t[:, None]]
        )

    def eval(self, t) -> np.ndarray:
        """Curve points at parameter values t in [0, 1]."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any((t < 0.0) | (t > 1.0)):
            raise DomainError("curve parameter t must lie in [0, 1]")
        base = t[:, None] * self.x1[None, :] + (1.0 - t)[:, None] * self.x0[None, :]
        bump = self.bump.forward(self._bump_input(t))
        return base + _gate(t)[:, None] * bump

    def points(self) -> np.ndarray:
        return self.eval(self.grid())

    def eval_node(self, tape: Tape, t: np.ndarray) -> ad.Node:
        t = np.asarray(t, dtype=np.float64)
        base = t[:, None] * self.x1[None, :] + (1.0 - t)[:, None] * self.x0[None, :]
        bump = self.bump.forward_node(tape, tape.constant(self._bump_input(t)))
        return ad.add(ad.mul(bump, _gate(t)[:, None]), base)


def new_bump_network(dim: int, hidden: tuple[int, ...] = (192, 192, 192), seed: int = 0) -> MlpModel:
    """Curve correction network; the zeroed output layer makes the initial
    curve exactly the straight chord."""
    net = MlpModel([2 * dim + 1, *hidden, dim], seed=seed)
    net.weights[-1][...] = 0.0
    net.biases[-1][...] = 0.0
    return net


def _latent_deltas(tape: Tape, warped_map, curve_pts: ad.Node, m: int) -> ad.Node:
    z = warped_map.encode_node(tape, curve_pts)
    hi = ad.take_rows(z, np.arange(1, m + 1))
    lo = ad.take_rows(z, np.arange(0, m))
    return ad.sub(hi, lo)


def curve_energy(curve: Curve, warped_map) -> float:
    """Discrete energy: M * sum of squared latent segment displacements."""
    tape = Tape()
    m = curve.n_segments
    pts = curve.eval_node(tape, curve.grid())
    deltas = _latent_deltas(tape, warped_map, pts, m)
    return float(m * np.sum(deltas.value**2))


def curve_length(curve: Curve, warped_map) -> float:
    """Discrete latent arc length: sum of latent segment norms."""
    z = warped_map.encode(curve.points())
    return float(np.linalg.norm(np.diff(z, axis=0), axis=1).sum())


def max_score_on_curve(curve: Curve, scorer) -> float:
    return float(np.max(scorer.score(curve.points())))


@dataclass
class GeodesicConfig:
    n_segments: int = 30
    steps: int = 500
    lr: float = 1e-3
    weight_decay: float = 0.0
    hidden: tuple[int, ...] = (192, 192, 192)
    seed: int = 0
    eps: float | None = None  # endpoint on-manifold threshold; None skips the check

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc


def fit_geodesic(
    x0: np.ndarray,
    x1: np.ndarray,
    warped_map,
    config: GeodesicConfig | None = None,
) -> tuple[Curve, list[float]]:
    """Minimize discrete curve energy over the bump network parameters.

    Returns the best-energy curve seen during optimization and the raw
    per-step energy history.
    """
    config = config or GeodesicConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if config.eps is not None:
        scorer = warped_map.scorer
        s = np.array([float(scorer.score(x0)), float(scorer.score(x1))])
        if np.any(s >= config.eps):
            raise OffManifoldEndpointError(
                f"endpoint deviation scores {s.tolist()} exceed eps={config.eps}"
            )

    bump = new_bump_network(x0.shape[0], hidden=config.hidden, seed=config.seed)
    curve = Curve(x0, x1, bump, n_segments=config.n_segments)
    optimizer = AdamW(bump.params(), lr=config.lr, weight_decay=config.weight_decay)
    grid = curve.grid()
    m = config.n_segments

    best_energy = np.inf
    best_params = bump.copy_params()
    history: list[float] = []
    for _ in range(config.steps):
        tape = Tape()
        pts = curve.eval_node(tape, grid)
        deltas = _latent_deltas(tape, warped_map, pts, m)
        energy = ad.mul(ad.sum_(ad.square(deltas)), float(m))
        if not np.isfinite(energy.value):
            raise ContractError("curve energy became non-finite")
        history.append(float(energy.value))
        if history[-1] < best_energy:
            best_energy = history[-1]
            best_params = bump.copy_params()
        tape.backward(energy)
        leaves = bump.param_leaves(tape)
        optimizer.step([leaf.grad for leaf in leaves])

    # keep the best curve, then re-score the final candidate too
    tape = Tape()
    pts = curve.eval_node(tape, grid)
    deltas = _latent_deltas(tape, warped_map, pts, m)
    final_energy = float(m * np.sum(deltas.value**2))
    history.append(final_energy)
    if final_energy < best_energy:
        best_energy = final_energy
        best_params = bump.copy_params()
    bump.set_params(best_params)
    bump.eval()
    return curve, history
