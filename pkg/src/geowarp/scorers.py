"""Deviation scorers: how far is a point from the data manifold?

Two interchangeable scorers produce s(x) >= ~0 on the manifold and growing
with distance from it:

* :class:`DiscriminatorScorer` - a Lipschitz-constrained critic network
  trained to separate data from Gaussian-noised negatives; the score is the
  critic's shortfall against its mean on data.
* :class:`GpVarianceScorer` - the posterior variance of a unit-amplitude
  RBF Gaussian process conditioned on (a subsample of) the data.

:class:`WarpedEncoder` appends beta * s(x) as an extra latent coordinate,
so off-manifold excursions cost latent distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import Tape
from .autoencoder import Standardizer
from .errors import (
    ConditioningError,
    ContractError,
    SchemaVersionError,
    TrainingDivergedError,
)
from .manifolds import PointCloud, default_negative_variance, negative_sample
from .nn import MlpModel, spectral_normalize
from .optim import AdamW, clip_params

SCORER_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# critic-based scorer


def critic_loss_node(
    tape: Tape,
    net: MlpModel,
    data: np.ndarray,
    negatives: np.ndarray,
    rng: np.random.Generator | None = None,
) -> ad.Node:
    """mean w(negatives) - mean w(data) + population variance of w(data)."""
    w_data = net.forward_node(tape, tape.constant(data), rng=rng)
    w_neg = net.forward_node(tape, tape.constant(negatives), rng=rng)
    mean_data = ad.mean(w_data)
    mean_neg = ad.mean(w_neg)
    var_data = ad.sub(ad.mean(ad.square(w_data)), ad.square(mean_data))
    return ad.add(ad.sub(mean_neg, mean_data), var_data)


def critic_loss(net: MlpModel, data: np.ndarray, negatives: np.ndarray) -> float:
    if data.shape[0] < 1 or negatives.shape[0] < 1:
        raise ContractError("both batches must be nonempty")
    tape = Tape()
    return float(critic_loss_node(tape, net, data, negatives).value)


class DiscriminatorScorer:
    """Deviation score from a Lipschitz critic: s(x) = mean_on_data - w(x)."""

    def __init__(self, net: MlpModel, standardizer: Standardizer, mean_on_data: float = 0.0):
        self.net = net
        self.standardizer = standardizer
        self.mean_on_data = float(mean_on_data)

    def critic(self, x: np.ndarray) -> np.ndarray:
        out = self.net.forward(self.standardizer.transform(np.asarray(x, dtype=np.float64)))
        return out[..., 0]

    def score(self, x: np.ndarray) -> np.ndarray:
        return self.mean_on_data - self.critic(x)

    def score_node(self, tape: Tape, x: ad.Node) -> ad.Node:
        # the critic is a frozen reference here; only x-gradients flow
        scaled = ad.mul(ad.sub(x, self.standardizer.mean.copy()), 1.0 / self.standardizer.std)
        w = self.net.forward_node(tape, scaled, params_need_grad=False)
        return ad.sub(np.full((1, 1), self.mean_on_data), w)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """ds/dx, one row per input row."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        jac = self.net.jacobian_batch(self.standardizer.transform(x))
        grad = -jac[:, 0, :] / self.standardizer.std[None, :]
        return grad[0] if single else grad

    def lipschitz_estimate(self) -> float:
        """Product of per-layer spectral-norm estimates (input scaling included)."""
        bound = float(np.prod(self.net.estimate_spectral_norms()))
        return bound * float(np.max(1.0 / self.standardizer.std))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCORER_SCHEMA_VERSION,
            "model": "discriminator_scorer",
            "mean_on_data": self.mean_on_data,
            "standardizer": self.standardizer.to_dict(),
            "net": self.net.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscriminatorScorer":
        if doc.get("schema_version") != SCORER_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported scorer schema_version {doc.get('schema_version')!r}"
            )
        return cls(
            MlpModel.from_dict(doc["net"]),
            Standardizer.from_dict(doc["standardizer"]),
            doc["mean_on_data"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "DiscriminatorScorer":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DiscriminatorConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 50
    seed: int = 0
    split: float = 0.9
    hidden: tuple[int, ...] = (256, 128, 64)
    clip_bound: float = 0.5

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscriminatorConfig":
        doc = dict(doc)
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        return cls(**doc)


def train_discriminator(
    data: PointCloud,
    c: float | None = None,
    config: DiscriminatorConfig | None = None,
) -> tuple[DiscriminatorScorer, list[dict]]:
    """Critic training against fresh Gaussian negatives each epoch.

    Every step applies the optimizer, clips weights, and renormalizes the
    spectral norm, keeping the critic Lipschitz. Early stopping watches the
    critic loss on a held-out slice of the data (with its own negatives).
    """
    config = config or DiscriminatorConfig()
    if c is None:
        c = default_negative_variance(data)
    if c <= 0:
        raise ContractError("noise variance c must be > 0")
    rng = np.random.default_rng(config.seed)

    order = rng.permutation(data.n)
    n_train = max(2, int(round(config.split * data.n)))
    n_train = min(n_train, data.n - 1) if data.n > 2 else n_train
    train_idx, val_idx = order[:n_train], order[n_train:]
    x_train = data.points[train_idx]
    x_val = data.points[val_idx]

    standardizer = Standardizer.fit(x_train)
    net = MlpModel(
        [data.dim, *config.hidden, 1],
        spectral_norm=True,
        norm=True,
        seed=config.seed + 1,
    )
    optimizer = AdamW(net.params(), lr=config.lr, weight_decay=config.weight_decay)
    sigma = np.sqrt(c)

    best_val = np.inf
    best_doc: dict | None = None
    best_epoch = -1
    history: list[dict] = []
    train_cloud = PointCloud(x_train)

    for epoch in range(config.epochs):
        net.train()
        negatives = negative_sample(
            train_cloud, c, seed=int(rng.integers(2**31))
        ).points
        perm = rng.permutation(x_train.shape[0])
        epoch_loss, count = 0.0, 0
        for start in range(0, perm.shape[0], config.batch_size):
            sel = perm[start : start + config.batch_size]
            if sel.shape[0] < 2:
                continue
            xb = standardizer.transform(x_train[sel])
            nb = standardizer.transform(negatives[sel])
            tape = Tape()
            loss = critic_loss_node(tape, net, xb, nb, rng=rng)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(f"non-finite critic loss at epoch {epoch}")
            tape.backward(loss)
            leaves = net.param_leaves(tape)
            optimizer.step([leaf.grad for leaf in leaves])
            clip_params(net.params(), config.clip_bound)
            spectral_normalize(net)
            epoch_loss += float(loss.value) * sel.shape[0]
            count += sel.shape[0]

        net.eval()
        if val_idx.shape[0] >= 2:
            val_neg = x_val + rng.normal(0.0, sigma, size=x_val.shape)
            val_loss = critic_loss(
                net, standardizer.transform(x_val), standardizer.transform(val_neg)
            )
        else:
            val_loss = epoch_loss / max(count, 1)
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss / max(count, 1), "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_doc = net.to_dict()
            best_epoch = epoch
        elif epoch - best_epoch > config.patience:
            break

    if best_doc is not None:
        net = MlpModel.from_dict(best_doc)
    net.eval().freeze()
    w_train = net.forward(standardizer.transform(x_train))[:, 0]
    return DiscriminatorScorer(net, standardizer, float(w_train.mean())), history


# ---------------------------------------------------------------------------
# Gaussian-process scorer


def _farthest_point_subset(pts: np.ndarray, m: int) -> np.ndarray:
    """Greedy farthest-point indices, started from the medoid-most point."""
    n = pts.shape[0]
    start = int(np.argmin(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    min_d = ((pts - pts[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        np.minimum(min_d, ((pts - pts[nxt]) ** 2).sum(axis=1), out=min_d)
    return np.sort(chosen)


class GpVarianceScorer:
    """Posterior variance of a unit-amplitude RBF GP as a deviation score.

    s(x) = 1 - k(x)^T (K + sigma_n^2 I)^{-1} k(x), which is ~sigma_n^2 at
    the inducing points and tends to 1 far from all of them.
    """

    def __init__(self, points: np.ndarray, sigma: float, sigma_n2: float = 1e-4):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ContractError("inducing points must be (m, D)")
        self.sigma = float(sigma)
        self.sigma_n2 = float(sigma_n2)
        if self.sigma <= 0 or self.sigma_n2 < 0:
            raise ContractError("sigma must be > 0 and sigma_n^2 >= 0")
        gram = self._kernel(self.points)
        gram[np.diag_indices_from(gram)] += self.sigma_n2
        try:
            self._chol = scipy.linalg.cholesky(gram, lower=True)
        except scipy.linalg.LinAlgError as err:
            raise ConditioningError(
                "kernel system is not positive definite; increase sigma_n or "
                "deduplicate points"
            ) from err
        self._inv = None

    @classmethod
    def from_data(
        cls,
        data: PointCloud | np.ndarray,
        sigma: float | None = None,
        sigma_n2: float = 1e-4,
        max_points: int = 1000,
        seed: int = 0,
    ) -> "GpVarianceScorer":
        """Fit to (a subsample of) the data.

        The default bandwidth is the 5th-percentile pairwise distance of a
        500-point subsample: a local-scale estimate. A global-scale
        bandwidth (median) leaves the variance basin too shallow to confine
        Langevin chains near the manifold.
        """
        pts = data.points if isinstance(data, PointCloud) else np.asarray(data, dtype=np.float64)
        rng = np.random.default_rng(seed)
        if sigma is None:
            probe = pts
            if probe.shape[0] > 500:
                probe = probe[rng.choice(probe.shape[0], size=500, replace=False)]
            diff = probe[:, None, :] - probe[None, :, :]
            dists = np.sqrt((diff**2).sum(axis=2))
            iu = np.triu_indices(probe.shape[0], k=1)
            sigma = float(np.quantile(dists[iu], 0.05))
            if sigma <= 0:
                sigma = float(np.median(dists[iu]))
        if pts.shape[0] > max_points:
            # farthest-point traversal: near-uniform coverage of the support,
            # so the on-manifold variance baseline stays flat even when the
            # data sampling is badly imbalanced
            pts = pts[_farthest_point_subset(pts, max_points)]
        return cls(pts, sigma, sigma_n2)

    def _kernel(self, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        y = self.points if y is None else y
        sq = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-sq / (2.0 * self.sigma**2))

    def _solve(self, k: np.ndarray) -> np.ndarray:
        # dense inverse applied by gemm: worth it because scoring runs
        # thousands of times per Langevin chain pass
        if self._inv is None:
            self._inv = scipy.linalg.cho_solve(
                (self._chol, True), np.eye(self.points.shape[0])
            )
        return self._inv @ k

    def score(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        k = self._kernel(x)
        alpha = self._solve(k.T)
        s = 1.0 - np.einsum("qm,mq->q", k, alpha)
        s = np.maximum(s, 0.0)
        return float(s[0]) if single else s

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Analytic ds/dx via the RBF kernel derivative."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        k = self._kernel(x)
        alpha = self._solve(k.T).T  # (q, m)
        coeff = 2.0 / self.sigma**2 * (alpha * k)
        grad = coeff.sum(axis=1)[:, None] * x - coeff @ self.points
        return grad[0] if single else grad

    def score_node(self, tape: Tape, x: ad.Node) -> ad.Node:
        if self._inv is None:
            self._inv = self._solve(np.eye(self.points.shape[0]))
        sq_x = ad.sum_(ad.square(x), axis=1, keepdims=True)
        cross = ad.matmul(x, (self.points.T).copy())
        sq_pts = (self.points**2).sum(axis=1)[None, :]
        sq = ad.add(ad.sub(sq_x, ad.mul(cross, 2.0)), sq_pts)
        k = ad.exp(ad.mul(sq, -1.0 / (2.0 * self.sigma**2)))
        quad = ad.sum_(ad.mul(k, ad.matmul(k, self._inv)), axis=1, keepdims=True)
        return ad.sub(np.ones((1, 1)), quad)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCORER_SCHEMA_VERSION,
            "model": "gp_variance_scorer",
            "sigma": self.sigma,
            "sigma_n2": self.sigma_n2,
            "points": self.points.tolist(),
            "chol_lower": self._chol.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GpVarianceScorer":
        if doc.get("schema_version") != SCORER_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported scorer schema_version {doc.get('schema_version')!r}"
            )
        scorer = cls.__new__(cls)
        scorer.points = np.asarray(doc["points"], dtype=np.float64)
        scorer.sigma = float(doc["sigma"])
        scorer.sigma_n2 = float(doc["sigma_n2"])
        scorer._chol = np.asarray(doc["chol_lower"], dtype=np.float64)
        scorer._inv = None
        return scorer

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "GpVarianceScorer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_scorer(path: str | Path):
    doc = json.loads(Path(path).read_text())
    kind = doc.get("model")
    if kind == "discriminator_scorer":
        return DiscriminatorScorer.from_dict(doc)
    if kind == "gp_variance_scorer":
        return GpVarianceScorer.from_dict(doc)
    raise SchemaVersionError(f"unknown scorer checkpoint kind {kind!r}")


# ---------------------------------------------------------------------------
# warped encoder


class WarpedEncoder:
    """Encoder extended with a deviation coordinate: (f(x), beta * s(x)).

    Behaves like an encoder map with latent dimension d + 1; the extra
    coordinate inflates latent distances for off-manifold displacements.
    """

    def __init__(self, encoder_map, scorer, beta: float = 10.0):
        if beta < 0:
            raise ContractError("beta must be >= 0")
        self.encoder_map = encoder_map
        self.scorer = scorer
        self.beta = float(beta)

    @property
    def ambient_dim(self) -> int:
        return self.encoder_map.ambient_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder_map.latent_dim + 1

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        z = self.encoder_map.encode(x)
        s = np.asarray(self.scorer.score(x), dtype=np.float64).reshape(-1, 1)
        out = np.hstack([z, self.beta * s])
        return out[0] if single else out

    def encode_node(self, tape: Tape, x: ad.Node) -> ad.Node:
        # frozen reference map: gradients flow to x only, never into the
        # encoder or scorer parameters
        z = self.encoder_map.encode_node(tape, x, params_need_grad=False)
        s = self.scorer.score_node(tape, x)
        return ad.concat([z, ad.mul(s, self.beta)], axis=1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.jacobian_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def jacobian_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        jz = self.encoder_map.jacobian_batch(x)
        gs = self.beta * np.asarray(self.scorer.gradient(x), dtype=np.float64)
        return np.concatenate([jz, gs[:, None, :]], axis=1)


def extended_encode(warped: WarpedEncoder, x: np.ndarray) -> np.ndarray:
    """Functional alias for :meth:`WarpedEncoder.encode`."""
    return warped.encode(x)
