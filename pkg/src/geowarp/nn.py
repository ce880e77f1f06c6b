"""Feed-forward network stack built on the tape engine.

An :class:`MlpModel` is a plain ReLU multilayer perceptron with optional
per-hidden-layer extras, applied in this order: linear, spectral weight
normalization (maintained on the stored weights), affine normalization
against running activation statistics, ReLU, dropout. The output layer is
always a bare linear map.

The normalization layer intentionally freezes its statistics at evaluation
time: metric and Jacobian computations downstream require the eval-mode
network to be a fixed deterministic map. During training the layer
normalizes with the current running statistics (treated as constants for
gradients) and updates them from each batch afterwards.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import NondeterminismError, SchemaVersionError, ShapeError

CHECKPOINT_SCHEMA_VERSION = 1
_NORM_EPS = 1e-5
_NORM_MOMENTUM = 0.1


def leaf_for(tape: Tape, array: np.ndarray, needs_grad: bool) -> Node:
    """Tape leaf memoized by parameter identity.

    Repeated forward passes of one model on one tape must share leaves so
    gradient contributions accumulate instead of splitting.
    """
    cache = getattr(tape, "_param_leaf_cache", None)
    if cache is None:
        cache = {}
        tape._param_leaf_cache = cache
    node = cache.get(id(array))
    if node is None:
        node = tape.leaf(array, needs_grad=needs_grad)
        cache[id(array)] = node
    return node


class MlpModel:
    """Multilayer perceptron: ReLU hidden layers, identity output layer.

    Parameters
    ----------
    layer_dims : widths from input to output, e.g. ``[3, 256, 128, 64, 2]``.
    dropout_rate : hidden-layer dropout probability, active in train mode.
    spectral_norm : track a power-iteration vector per layer so that
        :func:`spectral_normalize` can rescale weights to unit top singular
        value.
    norm : insert the running-statistics affine normalization after each
        hidden linear layer.
    seed : weight initialization seed (He-uniform hidden, Glorot-uniform
        output, zero biases).
    """

    def __init__(
        self,
        layer_dims: list[int],
        *,
        dropout_rate: float = 0.0,
        spectral_norm: bool = False,
        norm: bool = False,
        seed: int = 0,
    ):
        if len(layer_dims) < 2:
            raise ShapeError("layer_dims needs at least input and output widths")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.activation = "relu"
        self.dropout_rate = float(dropout_rate)
        self.spectral_norm = bool(spectral_norm)
        self.norm = bool(norm)
        self.mode = "train"
        self.requires_grad = True

        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        n_layers = len(self.layer_dims) - 1
        for l in range(n_layers):
            fan_in, fan_out = self.layer_dims[l], self.layer_dims[l + 1]
            if l < n_layers - 1:
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

        self.norm_gamma = [np.ones(d) for d in self.layer_dims[1:-1]] if self.norm else []
        self.norm_delta = [np.zeros(d) for d in self.layer_dims[1:-1]] if self.norm else []
        self.norm_mean = [np.zeros(d) for d in self.layer_dims[1:-1]] if self.norm else []
        self.norm_var = [np.ones(d) for d in self.layer_dims[1:-1]] if self.norm else []
        if self.spectral_norm:
            self.sn_u = [rng.standard_normal(d) for d in self.layer_dims[:-1]]
            for u in self.sn_u:
                u /= np.linalg.norm(u)
        else:
            self.sn_u = []

    # -- mode handling ---------------------------------------------------

    def train(self) -> "MlpModel":
        self.mode = "train"
        return self

    def eval(self) -> "MlpModel":
        self.mode = "eval"
        return self

    def freeze(self) -> "MlpModel":
        """Mark parameters as non-trainable; backward skips their gradients."""
        self.requires_grad = False
        return self

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    # -- parameters --------------------------------------------------------

    def params(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (updated in place by optimizers)."""
        out: list[np.ndarray] = []
        for l in range(len(self.weights)):
            out.append(self.weights[l])
            out.append(self.biases[l])
        out.extend(self.norm_gamma)
        out.extend(self.norm_delta)
        return out

    def set_params(self, values: list[np.ndarray]) -> None:
        own = self.params()
        if len(own) != len(values):
            raise ShapeError("parameter count mismatch")
        for dst, src in zip(own, values):
            dst[...] = src

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def param_leaves(self, tape: Tape) -> list[Node]:
        """Leaves for ``params()`` on this tape, in the same order."""
        return [leaf_for(tape, p, self.requires_grad) for p in self.params()]

    # -- forward -----------------------------------------------------------

    def forward_node(
        self,
        tape: Tape,
        x: Node,
        rng: np.random.Generator | None = None,
        params_need_grad: bool | None = None,
    ) -> Node:
        """Record the forward pass on ``tape``; returns the output Node.

        In train mode, dropout draws masks from ``rng`` and the running
        normalization statistics are updated from each batch.
        """
        if x.value.ndim != 2 or x.value.shape[1] != self.in_dim:
            raise ShapeError(
                f"expected input of shape (n, {self.in_dim}), got {x.value.shape}"
            )
        training = self.mode == "train"
        if training and self.dropout_rate > 0.0 and rng is None:
            raise NondeterminismError("train-mode forward with dropout requires an rng")
        needs = self.requires_grad if params_need_grad is None else params_need_grad

        h = x
        n_layers = len(self.weights)
        for l in range(n_layers):
            w = leaf_for(tape, self.weights[l], needs)
            b = leaf_for(tape, self.biases[l], needs)
            h = ad.add(ad.matmul(h, w), b)
            if l == n_layers - 1:
                break
            if self.norm:
                if training:
                    self._update_running_stats(l, h.value)
                inv_std = 1.0 / np.sqrt(self.norm_var[l] + _NORM_EPS)
                centered = ad.mul(ad.sub(h, self.norm_mean[l].copy()), inv_std)
                gamma = leaf_for(tape, self.norm_gamma[l], needs)
                delta = leaf_for(tape, self.norm_delta[l], needs)
                h = ad.add(ad.mul(centered, gamma), delta)
            h = ad.relu(h)
            if training and self.dropout_rate > 0.0:
                keep = 1.0 - self.dropout_rate
                mask = (rng.random(h.value.shape) < keep) / keep
                h = ad.mul(h, mask)
        return h

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Plain forward pass; accepts a single vector or a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        tape = Tape()
        out = self.forward_node(tape, tape.constant(x), rng=rng)
        return out.value[0] if single else out.value

    def _update_running_stats(self, l: int, batch: np.ndarray) -> None:
        m = batch.mean(axis=0)
        v = batch.var(axis=0)
        self.norm_mean[l] += _NORM_MOMENTUM * (m - self.norm_mean[l])
        self.norm_var[l] += _NORM_MOMENTUM * (v - self.norm_var[l])

    # -- differentiation -----------------------------------------------------

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobian of the network at a single input point (eval mode only)."""
        return self.jacobian_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def jacobian_batch(self, x: np.ndarray) -> np.ndarray:
        """Per-row Jacobians of a batch, shape (n, out_dim, in_dim).

        Closed-form eval-mode backprop: the network is piecewise linear, so
        each row's Jacobian is a product of weight matrices gated by the
        ReLU masks (and scaled by the frozen normalization). Implemented as
        a handful of large matmuls instead of a tape sweep; this is the hot
        path of volume-gradient evaluation.
        """
        if self.mode != "eval":
            raise NondeterminismError("jacobian requires eval mode")
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        n_layers = len(self.weights)
        out_dim = self.out_dim
        if n_layers == 1:
            return np.broadcast_to(self.weights[0].T, (n, out_dim, self.in_dim)).copy()

        # forward, keeping each hidden layer's gate = relu mask * norm scale
        h = x
        gates: list[np.ndarray] = []
        for l in range(n_layers - 1):
            pre = h @ self.weights[l]
            pre += self.biases[l]
            if self.norm:
                a = self.norm_gamma[l] / np.sqrt(self.norm_var[l] + _NORM_EPS)
                pre -= self.norm_mean[l]
                pre *= a
                pre += self.norm_delta[l]
            mask = pre > 0
            gates.append(mask * a if self.norm else mask.astype(np.float64))
            pre *= mask
            h = pre

        # reverse accumulation in a flat (width, n * out) layout: one gemm
        # per layer plus an in-place gate multiply on a reshaped view
        grad = (gates[-1].T[:, :, None] * self.weights[-1][:, None, :]).reshape(
            -1, n * out_dim
        )
        for l in range(n_layers - 2, 0, -1):
            grad = self.weights[l] @ grad
            grad.reshape(-1, n, out_dim)[...] *= gates[l - 1].T[:, :, None]
        jac = self.weights[0] @ grad  # (in_dim, n * out)
        return jac.reshape(self.in_dim, n, out_dim).transpose(1, 2, 0).copy()

    # -- spectral normalization ------------------------------------------------

    def estimate_spectral_norms(self) -> list[float]:
        """Current top-singular-value estimates, one power iteration each."""
        out = []
        for w, u in zip(self.weights, self.sn_u):
            v = w.T @ u
            v_norm = np.linalg.norm(v)
            if v_norm < 1e-30:
                out.append(0.0)
                continue
            v /= v_norm
            out.append(float(np.linalg.norm(w @ v)))
        return out

    # -- checkpointing -----------------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "layer_dims": self.layer_dims,
            "activation": self.activation,
            "flags": {
                "dropout_rate": self.dropout_rate,
                "spectral_norm": self.spectral_norm,
                "norm": self.norm,
            },
            "weights": [
                {"w": w.tolist(), "b": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
            "norm_stats": None,
            "sn_state": None,
        }
        if self.norm:
            doc["norm_stats"] = [
                {
                    "gamma": g.tolist(),
                    "delta": d.tolist(),
                    "mean": m.tolist(),
                    "var": v.tolist(),
                }
                for g, d, m, v in zip(
                    self.norm_gamma, self.norm_delta, self.norm_mean, self.norm_var
                )
            ]
        if self.spectral_norm:
            doc["sn_state"] = [u.tolist() for u in self.sn_u]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpModel":
        version = doc.get("schema_version")
        if version != CHECKPOINT_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported checkpoint schema_version {version!r}, "
                f"expected {CHECKPOINT_SCHEMA_VERSION}"
            )
        flags = doc["flags"]
        model = cls(
            doc["layer_dims"],
            dropout_rate=flags["dropout_rate"],
            spectral_norm=flags["spectral_norm"],
            norm=flags["norm"],
        )
        for l, layer in enumerate(doc["weights"]):
            w = np.asarray(layer["w"], dtype=np.float64)
            b = np.asarray(layer["b"], dtype=np.float64)
            if w.shape != model.weights[l].shape:
                raise ShapeError("checkpoint weight shape mismatch")
            model.weights[l][...] = w
            model.biases[l][...] = b
        if model.norm:
            for l, stats in enumerate(doc["norm_stats"]):
                model.norm_gamma[l][...] = stats["gamma"]
                model.norm_delta[l][...] = stats["delta"]
                model.norm_mean[l][...] = stats["mean"]
                model.norm_var[l][...] = stats["var"]
        if model.spectral_norm and doc.get("sn_state"):
            for l, u in enumerate(doc["sn_state"]):
                model.sn_u[l][...] = u
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def spectral_normalize(model: MlpModel) -> MlpModel:
    """Rescale each layer matrix to unit estimated top singular value.

    One power iteration per call refreshes the persisted left vector, then
    the layer is divided in place by the sigma estimate. Repeated calls
    converge to an exact unit spectral norm.
    """
    if not model.spectral_norm:
        raise ValueError("model was built without spectral_norm")
    for l, w in enumerate(model.weights):
        u = model.sn_u[l]
        v = w.T @ u
        v_norm = np.linalg.norm(v)
        if v_norm < 1e-30:
            continue
        v /= v_norm
        u_new = w @ v
        sigma = np.linalg.norm(u_new)
        if sigma < 1e-30:
            continue
        model.sn_u[l] = u_new / sigma
        w /= sigma
    return model
