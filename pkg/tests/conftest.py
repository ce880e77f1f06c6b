import numpy as np
import pytest

from geowarp import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class IdentityMap:
    """Minimal encoder-map double: the identity on R^dim."""

    def __init__(self, dim: int):
        self.dim = dim
        self.ambient_dim = dim
        self.latent_dim = dim

    def encode(self, x):
        return np.asarray(x, dtype=np.float64)

    def encode_node(self, tape, x):
        return x

    def jacobian(self, x):
        return np.eye(self.dim)

    def jacobian_batch(self, x):
        return np.broadcast_to(np.eye(self.dim), (x.shape[0], self.dim, self.dim)).copy()


class LinearMap:
    """Encoder-map double for a fixed matrix A (latent = A x)."""

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=np.float64)
        self.latent_dim, self.ambient_dim = self.a.shape

    def encode(self, x):
        return np.asarray(x, dtype=np.float64) @ self.a.T

    def encode_node(self, tape, x):
        return ad.matmul(x, self.a.T.copy())

    def jacobian(self, x):
        return self.a.copy()

    def jacobian_batch(self, x):
        return np.broadcast_to(self.a, (x.shape[0], *self.a.shape)).copy()


@pytest.fixture
def identity_map():
    return IdentityMap


@pytest.fixture
def linear_map():
    return LinearMap


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        grad.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


@pytest.fixture
def fd_gradient():
    return finite_difference_gradient
