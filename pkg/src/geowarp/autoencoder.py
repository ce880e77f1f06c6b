"""Distance-matching autoencoder.

The encoder is trained so that Euclidean distances between latent codes
reproduce precomputed manifold distances, down-weighted exponentially for
far pairs; the decoder reconstructs the input. Inputs are standardized
per-coordinate before entering the networks (the statistics live in the
checkpoint); distance targets always refer to raw coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import ContractError, SchemaVersionError, TrainingDivergedError
from .manifolds import DistanceMatrix, PointCloud
from .nn import MlpModel, spectral_normalize
from .optim import AdamW

GAE_SCHEMA_VERSION = 1


@dataclass
class Standardizer:
    """Per-coordinate affine map to zero mean, unit variance."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.where(std < 1e-12, 1.0, std))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(np.asarray(doc["mean"], dtype=np.float64),
                   np.asarray(doc["std"], dtype=np.float64))


class EncoderMap:
    """Raw-coordinates view of an encoder network plus standardization.

    This is the object metric computations consume: a deterministic map
    from ambient space to latent space with batched Jacobians.
    """

    def __init__(self, net: MlpModel, standardizer: Standardizer):
        self.net = net
        self.standardizer = standardizer

    @property
    def ambient_dim(self) -> int:
        return self.net.in_dim

    @property
    def latent_dim(self) -> int:
        return self.net.out_dim

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(self.standardizer.transform(np.asarray(x, dtype=np.float64)))

    def encode_node(
        self, tape: Tape, x: ad.Node, rng=None, params_need_grad: bool | None = None
    ) -> ad.Node:
        scaled = ad.mul(
            ad.sub(x, self.standardizer.mean.copy()), 1.0 / self.standardizer.std
        )
        return self.net.forward_node(tape, scaled, rng=rng, params_need_grad=params_need_grad)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.jacobian_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def jacobian_batch(self, x: np.ndarray) -> np.ndarray:
        z = self.standardizer.transform(np.asarray(x, dtype=np.float64))
        jac = self.net.jacobian_batch(z)
        return jac / self.standardizer.std[None, None, :]


class DistanceMatchingAutoencoder:
    """Encoder/decoder pair with distance-matching and reconstruction losses."""

    def __init__(
        self,
        ambient_dim: int,
        d_latent: int = 2,
        hidden: tuple[int, ...] = (256, 128, 64),
        *,
        lambda1: float = 77.4,
        lambda2: float = 0.32,
        zeta: float = 0.5,
        dropout: float = 0.2,
        spectral_norm: bool = True,
        norm: bool = True,
        seed: int = 0,
    ):
        if lambda1 <= 0 and lambda2 <= 0:
            raise ContractError("at least one loss weight must be positive")
        if zeta < 0:
            raise ContractError("zeta must be >= 0")
        self.d_latent = int(d_latent)
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.zeta = float(zeta)
        self.encoder = MlpModel(
            [ambient_dim, *hidden, d_latent],
            dropout_rate=dropout,
            spectral_norm=spectral_norm,
            norm=norm,
            seed=seed,
        )
        self.decoder = MlpModel(
            [d_latent, *hidden[::-1], ambient_dim],
            dropout_rate=dropout,
            spectral_norm=spectral_norm,
            norm=norm,
            seed=seed + 1,
        )
        self.standardizer = Standardizer.identity(ambient_dim)

    # -- mode ------------------------------------------------------------

    def train(self) -> "DistanceMatchingAutoencoder":
        self.encoder.train()
        self.decoder.train()
        return self

    def eval(self) -> "DistanceMatchingAutoencoder":
        self.encoder.eval()
        self.decoder.eval()
        return self

    @property
    def ambient_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def encoder_map(self) -> EncoderMap:
        return EncoderMap(self.encoder, self.standardizer)

    # -- plain inference ---------------------------------------------------

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.encoder.forward(self.standardizer.transform(np.asarray(x, dtype=np.float64)))

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.standardizer.inverse(self.decoder.forward(np.asarray(z, dtype=np.float64)))

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(x))

    # -- losses ---------------------------------------------------------------

    def loss_nodes(
        self,
        tape: Tape,
        x: np.ndarray,
        dsub: np.ndarray | None,
        rng: np.random.Generator | None = None,
    ) -> tuple[ad.Node, ad.Node | None, ad.Node]:
        """(total, dist, recon) loss nodes for one batch.

        ``dsub`` is the batch-aligned block of the distance matrix; pass
        None to skip the distance term (reconstruction-only training).
        """
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        x_node = tape.constant(x)
        z = self.encoder_map.encode_node(tape, x_node, rng=rng)
        xhat_scaled = self.decoder.forward_node(tape, z, rng=rng)
        xhat = ad.add(ad.mul(xhat_scaled, self.standardizer.std.copy()),
                      self.standardizer.mean.copy())
        recon = ad.mean(ad.sum_(ad.square(ad.sub(x_node, xhat)), axis=1))

        dist_node = None
        if dsub is not None and self.lambda1 > 0.0 and n >= 2:
            if np.any(dsub < 0):
                raise ContractError("distance matrix has negative entries")
            iu, ju = np.triu_indices(n, k=1)
            target = dsub[iu, ju]
            weight = np.exp(-self.zeta * target)
            zi = ad.take_rows(z, iu)
            zj = ad.take_rows(z, ju)
            pair_sq = ad.sum_(ad.square(ad.sub(zi, zj)), axis=1)
            pair_dist = ad.sqrt(ad.add(pair_sq, 1e-24))
            stress = ad.square(ad.sub(pair_dist, target))
            dist_node = ad.mul(ad.sum_(ad.mul(stress, weight)), 1.0 / n)

        if dist_node is None:
            total = ad.mul(recon, self.lambda2)
        else:
            total = ad.add(ad.mul(dist_node, self.lambda1), ad.mul(recon, self.lambda2))
        return total, dist_node, recon

    def loss_recon(self, x: np.ndarray) -> float:
        tape = Tape()
        _, _, recon = self.loss_nodes(tape, x, None)
        return float(recon.value)

    def loss_dist(self, x: np.ndarray, d: np.ndarray | DistanceMatrix) -> float:
        d = d.d if isinstance(d, DistanceMatrix) else np.asarray(d, dtype=np.float64)
        tape = Tape()
        _, dist, _ = self.loss_nodes(tape, x, d)
        return 0.0 if dist is None else float(dist.value)

    def loss_total(self, x: np.ndarray, d: np.ndarray | DistanceMatrix) -> float:
        d = d.d if isinstance(d, DistanceMatrix) else np.asarray(d, dtype=np.float64)
        tape = Tape()
        total, _, _ = self.loss_nodes(tape, x, d)
        return float(total.value)

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def param_leaves(self, tape: Tape) -> list[ad.Node]:
        return self.encoder.param_leaves(tape) + self.decoder.param_leaves(tape)

    # -- checkpointing -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": GAE_SCHEMA_VERSION,
            "model": "distance_matching_autoencoder",
            "d_latent": self.d_latent,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "zeta": self.zeta,
            "standardizer": self.standardizer.to_dict(),
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DistanceMatchingAutoencoder":
        if doc.get("schema_version") != GAE_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported autoencoder schema_version {doc.get('schema_version')!r}"
            )
        encoder = MlpModel.from_dict(doc["encoder"])
        model = cls.__new__(cls)
        model.d_latent = int(doc["d_latent"])
        model.lambda1 = float(doc["lambda1"])
        model.lambda2 = float(doc["lambda2"])
        model.zeta = float(doc["zeta"])
        model.encoder = encoder
        model.decoder = MlpModel.from_dict(doc["decoder"])
        model.standardizer = Standardizer.from_dict(doc["standardizer"])
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "DistanceMatchingAutoencoder":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainConfig:
    """Autoencoder training configuration (JSON-serializable)."""

    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lambda1: float = 77.4
    lambda2: float = 0.32
    zeta: float = 0.5
    patience: int = 50
    seed: int = 0
    split: float = 0.9
    d_latent: int = 2
    hidden: tuple[int, ...] = (256, 128, 64)
    dropout: float = 0.2
    spectral_norm: bool = True
    norm: bool = True

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        return cls(**doc)


def train_autoencoder(
    data: PointCloud,
    distances: DistanceMatrix,
    config: TrainConfig | None = None,
) -> tuple[DistanceMatchingAutoencoder, list[dict]]:
    """Minibatch AdamW training with early stopping on validation loss.

    Each minibatch uses the aligned sub-block of the distance matrix for
    the pair term. Returns the best-validation checkpoint and the per-epoch
    loss history.
    """
    config = config or TrainConfig()
    if distances.n != data.n:
        raise ContractError("distance matrix does not align with data")
    rng = np.random.default_rng(config.seed)

    order = rng.permutation(data.n)
    n_train = max(2, int(round(config.split * data.n)))
    n_train = min(n_train, data.n - 1) if data.n > 2 else n_train
    train_idx, val_idx = order[:n_train], order[n_train:]
    x_train, x_val = data.points[train_idx], data.points[val_idx]
    d_full = distances.d
    d_val = d_full[np.ix_(val_idx, val_idx)]

    model = DistanceMatchingAutoencoder(
        data.dim,
        d_latent=config.d_latent,
        hidden=config.hidden,
        lambda1=config.lambda1,
        lambda2=config.lambda2,
        zeta=config.zeta,
        dropout=config.dropout,
        spectral_norm=config.spectral_norm,
        norm=config.norm,
        seed=config.seed + 1,
    )
    model.standardizer = Standardizer.fit(x_train)
    optimizer = AdamW(model.params(), lr=config.lr, weight_decay=config.weight_decay)

    best_val = np.inf
    best_doc: dict | None = None
    best_epoch = -1
    history: list[dict] = []

    for epoch in range(config.epochs):
        model.train()
        perm = rng.permutation(train_idx.shape[0])
        sums = {"total": 0.0, "dist": 0.0, "recon": 0.0}
        count = 0
        for start in range(0, perm.shape[0], config.batch_size):
            sel = perm[start : start + config.batch_size]
            if sel.shape[0] < 2:
                continue
            rows = train_idx[sel]
            x = data.points[rows]
            dsub = d_full[np.ix_(rows, rows)]
            tape = Tape()
            total, dist, recon = model.loss_nodes(tape, x, dsub, rng=rng)
            if not np.isfinite(total.value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            tape.backward(total)
            leaves = model.param_leaves(tape)
            optimizer.step([leaf.grad for leaf in leaves])
            if model.encoder.spectral_norm:
                spectral_normalize(model.encoder)
            if model.decoder.spectral_norm:
                spectral_normalize(model.decoder)
            sums["total"] += float(total.value) * sel.shape[0]
            sums["dist"] += (0.0 if dist is None else float(dist.value)) * sel.shape[0]
            sums["recon"] += float(recon.value) * sel.shape[0]
            count += sel.shape[0]

        model.eval()
        if val_idx.shape[0] >= 2:
            val_total = model.loss_total(x_val, d_val)
        else:
            val_total = sums["total"] / max(count, 1)
        history.append(
            {
                "epoch": epoch,
                "train_total": sums["total"] / max(count, 1),
                "val_total": val_total,
                "train_dist": sums["dist"] / max(count, 1),
                "train_recon": sums["recon"] / max(count, 1),
            }
        )
        if not np.isfinite(val_total):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        if val_total < best_val:
            best_val = val_total
            best_doc = model.to_dict()
            best_epoch = epoch
        elif epoch - best_epoch > config.patience:
            break

    if best_doc is not None:
        model = DistanceMatchingAutoencoder.from_dict(best_doc)
    model.eval()
    return model, history


def save_history(history: list[dict], path: str | Path) -> None:
    lines = ["epoch,train_total,val_total,train_dist,train_recon"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['train_total']:.17g},{row['val_total']:.17g},"
            f"{row['train_dist']:.17g},{row['train_recon']:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
