"""AdamW optimizer with decoupled weight decay, plus weight clipping."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, TrainingDivergedError


class AdamW:
    """Adaptive-moment optimizer updating parameter arrays in place.

    Weight decay is decoupled: it scales the parameter directly instead of
    being folded into the gradient.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(
                f"expected {len(self.params)} gradients, got {len(grads)}"
            )
        for g in grads:
            if g is not None and not np.all(np.isfinite(g)):
                raise TrainingDivergedError("non-finite gradient in optimizer step")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros_like(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p)


def clip_params(params: list[np.ndarray], bound: float) -> None:
    """Clamp every entry of every array to [-bound, bound], in place."""
    for p in params:
        np.clip(p, -bound, bound, out=p)
