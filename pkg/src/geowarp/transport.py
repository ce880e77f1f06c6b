"""Population transport: latent-space optimal coupling plus flow matching.

Each training step draws equal batches from the source and target
populations, solves the exact minimum-cost bijection under squared latent
distance, and descends a joint objective: the paired curves' energy under
the warped metric plus the mismatch between a time-velocity field and the
curves' discrete time-derivatives. Integrating the learned field from a
source point reproduces its geodesic.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tape
from .errors import ContractError, TrainingDivergedError
from .geodesics import _gate, new_bump_network
from .manifolds import PointCloud
from .nn import MlpModel
from .optim import AdamW

MAX_OT_BATCH = 128


@dataclass
class TransportPlan:
    """Minimum-cost bijection between two equal-sized batches."""

    pairing: np.ndarray  # (b, 2) rows of (source index, target index)
    cost: float


def minibatch_ot(x_batch: np.ndarray, y_batch: np.ndarray, encoder_map) -> TransportPlan:
    """Exact assignment under squared Euclidean latent distance."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    y_batch = np.asarray(y_batch, dtype=np.float64)
    if x_batch.shape[0] != y_batch.shape[0]:
        raise ContractError(
            f"batch sizes differ: {x_batch.shape[0]} vs {y_batch.shape[0]}"
        )
    b = x_batch.shape[0]
    if b < 1 or b > MAX_OT_BATCH:
        raise ContractError(f"batch size must be in [1, {MAX_OT_BATCH}], got {b}")
    zx = encoder_map.encode(x_batch)
    zy = encoder_map.encode(y_batch)
    cost = ((zx[:, None, :] - zy[None, :, :]) ** 2).sum(axis=2)
    col_of_row, total = kernels.solve_assignment(cost)
    pairing = np.stack([np.arange(b), col_of_row], axis=1)
    return TransportPlan(pairing=pairing, cost=float(total))


class ConditionedCurves:
    """One bump network shared across endpoint pairs.

    The network reads (x0, x1, t) so freshly re-paired batches reuse the
    same parameters every step.
    """

    def __init__(self, bump: MlpModel, n_segments: int = 30):
        self.bump = bump
        self.n_segments = int(n_segments)

    @property
    def dim(self) -> int:
        return self.bump.out_dim

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_segments + 1)

    def _inputs(self, x0: np.ndarray, x1: np.ndarray, t: np.ndarray) -> np.ndarray:
        b = x0.shape[0]
        m = t.shape[0]
        rep0 = np.repeat(x0, m, axis=0)
        rep1 = np.repeat(x1, m, axis=0)
        ts = np.tile(t, b)[:, None]
        return np.hstack([rep0, rep1, ts])

    def eval_node(self, tape: Tape, x0: np.ndarray, x1: np.ndarray) -> ad.Node:
        """Curve points for every pair over the grid, flattened to
        (b * (M + 1), dim) with time fastest."""
        t = self.grid()
        inputs = self._inputs(x0, x1, t)
        bump = self.bump.forward_node(tape, tape.constant(inputs))
        tcol = inputs[:, -1]
        base = tcol[:, None] * np.repeat(x1, t.shape[0], axis=0) + (
            1.0 - tcol
        )[:, None] * np.repeat(x0, t.shape[0], axis=0)
        return ad.add(ad.mul(bump, _gate(tcol)[:, None]), base)

    def eval(self, x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
        """Curve points, shape (b, M + 1, dim)."""
        x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
        x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
        tape = Tape()
        flat = self.eval_node(tape, x0, x1).value
        return flat.reshape(x0.shape[0], self.n_segments + 1, self.dim)


class FlowField:
    """Time-velocity field v(x0, t) regressed onto curve derivatives."""

    def __init__(self, net: MlpModel):
        self.net = net

    @property
    def dim(self) -> int:
        return self.net.out_dim

    @classmethod
    def new(cls, dim: int, hidden: tuple[int, ...] = (64, 64, 64), seed: int = 0) -> "FlowField":
        net = MlpModel([dim + 1, *hidden, dim], seed=seed)
        net.weights[-1][...] = 0.0
        net.biases[-1][...] = 0.0
        return cls(net)

    def _inputs(self, x0: np.ndarray, t: np.ndarray) -> np.ndarray:
        m = t.shape[0]
        rep = np.repeat(np.atleast_2d(x0), m, axis=0)
        ts = np.tile(t, x0.shape[0] if x0.ndim == 2 else 1)[:, None]
        return np.hstack([rep, ts])

    def velocity(self, x0: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        x0 = np.asarray(x0, dtype=np.float64)
        single = x0.ndim == 1
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = self.net.forward(self._inputs(np.atleast_2d(x0), t))
        if single:
            return out[0] if t.shape[0] == 1 else out
        return out.reshape(x0.shape[0], t.shape[0], self.dim)

    def velocity_node(self, tape: Tape, x0: np.ndarray, t: np.ndarray) -> ad.Node:
        return self.net.forward_node(tape, tape.constant(self._inputs(x0, t)))


def _fm_loss_node(
    tape: Tape,
    flow: FlowField,
    curve_pts: ad.Node,
    x0: np.ndarray,
    n_segments: int,
) -> ad.Node:
    """Mean squared deviation between the field and forward-difference curve
    derivatives, over pairs and the grid points t_0 .. t_{M-1}.

    Matching the field at segment left endpoints makes a zero-loss field
    reproduce the curve exactly under explicit Euler integration with M
    steps (the update telescopes through the same differences).
    """
    b = x0.shape[0]
    m = n_segments
    dim = x0.shape[1]
    rows = np.arange(b * (m + 1)).reshape(b, m + 1)
    hi = ad.take_rows(curve_pts, rows[:, 1:].ravel())
    lo = ad.take_rows(curve_pts, rows[:, :-1].ravel())
    deriv = ad.mul(ad.sub(hi, lo), float(m))
    t_left = np.linspace(0.0, 1.0, m + 1)[:-1]
    v = flow.velocity_node(tape, x0, t_left)
    return ad.mean(ad.sum_(ad.square(ad.sub(v, deriv)), axis=1))


def flow_matching_loss(flow: FlowField, curves: ConditionedCurves,
                       x0: np.ndarray, x1: np.ndarray) -> float:
    """Evaluate the velocity-matching loss for given endpoint pairs."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    tape = Tape()
    pts = curves.eval_node(tape, x0, x1)
    return float(_fm_loss_node(tape, flow, pts, x0, curves.n_segments).value)


def _energy_node(tape: Tape, warped_map, curve_pts: ad.Node, b: int, m: int) -> ad.Node:
    z = warped_map.encode_node(tape, curve_pts)
    rows = np.arange(b * (m + 1)).reshape(b, m + 1)
    hi = ad.take_rows(z, rows[:, 1:].ravel())
    lo = ad.take_rows(z, rows[:, :-1].ravel())
    sq = ad.sum_(ad.square(ad.sub(hi, lo)))
    # M * sum over segments, averaged over the b pairs
    return ad.mul(sq, float(m) / b)


@dataclass
class TransportConfig:
    steps: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lambda_geo: float = 1.0
    lambda_fm: float = 1.0
    n_segments: int = 30
    bump_hidden: tuple[int, ...] = (192, 192, 192)
    flow_hidden: tuple[int, ...] = (64, 64, 64)
    seed: int = 0

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["bump_hidden"] = list(self.bump_hidden)
        doc["flow_hidden"] = list(self.flow_hidden)
        return doc


def train_transport(
    source: PointCloud,
    target: PointCloud,
    warped_map,
    config: TransportConfig | None = None,
) -> tuple[FlowField, ConditionedCurves, list[dict]]:
    """Jointly fit conditioned curves and the flow field over OT-coupled
    batches. Returns (flow, curves, history)."""
    config = config or TransportConfig()
    if source.dim != target.dim:
        raise ContractError("source and target dimensions differ")
    dim = source.dim
    rng = np.random.default_rng(config.seed)

    bump = new_bump_network(dim, hidden=config.bump_hidden, seed=config.seed + 1)
    curves = ConditionedCurves(bump, n_segments=config.n_segments)
    flow = FlowField.new(dim, hidden=config.flow_hidden, seed=config.seed + 2)
    params = bump.params() + flow.net.params()
    optimizer = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)

    b = min(config.batch_size, source.n, target.n)
    history: list[dict] = []
    for step in range(config.steps):
        xi = rng.choice(source.n, size=b, replace=source.n < b)
        yi = rng.choice(target.n, size=b, replace=target.n < b)
        x0 = source.points[xi]
        y = target.points[yi]
        plan = minibatch_ot(x0, y, warped_map.encoder_map)
        x1 = y[plan.pairing[:, 1]]

        tape = Tape()
        pts = curves.eval_node(tape, x0, x1)
        energy = _energy_node(tape, warped_map, pts, b, config.n_segments)
        fm = _fm_loss_node(tape, flow, pts, x0, config.n_segments)
        loss = ad.add(ad.mul(energy, config.lambda_geo), ad.mul(fm, config.lambda_fm))
        if not np.isfinite(loss.value):
            raise TrainingDivergedError(f"non-finite transport loss at step {step}")
        tape.backward(loss)
        leaves = bump.param_leaves(tape) + flow.net.param_leaves(tape)
        optimizer.step([leaf.grad for leaf in leaves])
        history.append(
            {
                "step": step,
                "loss": float(loss.value),
                "energy": float(energy.value),
                "fm": float(fm.value),
                "ot_cost": plan.cost,
            }
        )
    bump.eval()
    flow.net.eval()
    return flow, curves, history


def integrate_flow(flow: FlowField, x0: np.ndarray, n_steps: int = 100) -> np.ndarray:
    """Explicit Euler integration of the field from x0 over [0, 1].

    Returns the trajectory including both endpoints: (n_steps + 1, dim) for
    a single start point, (b, n_steps + 1, dim) for a batch.
    """
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x = np.atleast_2d(x0).copy()
    bsz = x.shape[0]
    out = np.empty((bsz, n_steps + 1, x.shape[1]))
    out[:, 0] = x
    h = 1.0 / n_steps
    for k in range(n_steps):
        v = flow.velocity(x if not single else x[0], np.array([k * h]))
        v = v.reshape(bsz, x.shape[1]) if not single else np.atleast_2d(v)
        if not np.all(np.isfinite(v)):
            raise TrainingDivergedError("non-finite flow field output")
        x = x + h * v
        out[:, k + 1] = x
    return out[0] if single else out


def empirical_wasserstein1(a, b, seed: int = 0) -> float:
    """Exact 1-Wasserstein distance between two point sets.

    Unequal sizes are handled by subsampling the larger set (seeded); the
    value is the minimal mean Euclidean pair cost over bijections.
    """
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)
    if pa.size == 0 or pb.size == 0:
        raise ContractError("empty point set")
    rng = np.random.default_rng(seed)
    n = min(pa.shape[0], pb.shape[0])
    if pa.shape[0] > n:
        pa = pa[rng.choice(pa.shape[0], size=n, replace=False)]
    if pb.shape[0] > n:
        pb = pb[rng.choice(pb.shape[0], size=n, replace=False)]
    cost = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2))
    _, total = kernels.solve_assignment(cost)
    return total / n
