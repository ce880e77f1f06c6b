import numpy as np
import pytest

from geowarp.autoencoder import EncoderMap, Standardizer
from geowarp.errors import ContractError, DegenerateJacobianError, ShapeError
from geowarp.nn import MlpModel
from geowarp.pullback import (
    MetricTensor,
    export_metric_csv,
    log_volume_gradient,
    metric_inner,
    pullback_metric,
    volume_element,
    volume_element_batch,
)


class ExpMap:
    """Smooth map (e^{x1}, x2) from R^3; log volume element = x1."""

    ambient_dim = 3
    latent_dim = 2

    def encode(self, x):
        x = np.atleast_2d(x)
        return np.stack([np.exp(x[:, 0]), x[:, 1]], axis=1)

    def jacobian(self, x):
        return self.jacobian_batch(np.asarray(x)[None, :])[0]

    def jacobian_batch(self, x):
        n = x.shape[0]
        jac = np.zeros((n, 2, 3))
        jac[:, 0, 0] = np.exp(x[:, 0])
        jac[:, 1, 1] = 1.0
        return jac


def test_metric_identity(identity_map):
    m = pullback_metric(identity_map(2), np.zeros(2))
    assert np.array_equal(m.g, np.eye(2))


def test_metric_linear_map(linear_map):
    m = pullback_metric(linear_map(np.array([[2.0, 0.0], [0.0, 1.0]])), np.zeros(2))
    assert np.array_equal(m.g, np.diag([4.0, 1.0]))


def test_metric_matches_fd_jacobian_product(rng):
    net = MlpModel([3, 8, 6, 2], seed=2).eval()
    for b in net.biases:
        b[...] = 0.05 * rng.standard_normal(b.shape)
    emap = EncoderMap(net, Standardizer.identity(3))
    x = rng.standard_normal(3)
    m = pullback_metric(emap, x)
    h = 1e-6
    jac = np.stack(
        [(emap.encode(x + h * e) - emap.encode(x - h * e)) / (2 * h) for e in np.eye(3)],
        axis=1,
    )
    assert np.allclose(m.g, jac.T @ jac, rtol=1e-4, atol=1e-8)


def test_metric_psd_for_random_maps(rng):
    for seed in range(8):
        net = MlpModel([3, 6, 2], seed=seed).eval()
        emap = EncoderMap(net, Standardizer.identity(3))
        m = pullback_metric(emap, rng.standard_normal(3))
        assert np.all(m.eigenvalues() >= -1e-10)
        assert np.max(np.abs(m.g - m.g.T)) <= 1e-12


def test_metric_inner_values():
    m = MetricTensor(np.eye(2), np.zeros(2))
    assert metric_inner(m, np.array([1.0, 1.0]), np.array([1.0, 1.0])) == pytest.approx(2.0)
    m2 = MetricTensor(np.diag([4.0, 1.0]), np.zeros(2))
    assert metric_inner(m2, np.array([1.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(4.0)


def test_metric_inner_symmetric(rng):
    g = rng.standard_normal((3, 3))
    m = MetricTensor(g @ g.T, np.zeros(3))
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    assert metric_inner(m, x, y) == pytest.approx(metric_inner(m, y, x))


def test_metric_inner_shape_check():
    m = MetricTensor(np.eye(2), np.zeros(2))
    with pytest.raises(ShapeError):
        metric_inner(m, np.ones(3), np.ones(3))


def test_metric_tensor_rejects_asymmetric():
    with pytest.raises(ContractError):
        MetricTensor(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))


def test_volume_element_linear(linear_map):
    emap = linear_map(np.array([[2.0, 0.0], [0.0, 1.0]]))
    assert volume_element(emap, np.zeros(2), 2) == pytest.approx(2.0)


def test_volume_element_identity(identity_map):
    assert volume_element(identity_map(2), np.zeros(2), 2) == pytest.approx(1.0)


def test_volume_element_top_d(linear_map):
    emap = linear_map(np.diag([3.0, 2.0, 0.5]))
    assert volume_element(emap, np.zeros(3), 2) == pytest.approx(6.0)
    assert volume_element(emap, np.zeros(3), 1) == pytest.approx(3.0)


def test_volume_element_degenerate_returns_zero(linear_map):
    emap = linear_map(np.diag([1.0, 0.0]))
    assert volume_element(emap, np.zeros(2), 2) == 0.0


def test_volume_element_d_out_of_range(identity_map):
    with pytest.raises(ContractError):
        volume_element(identity_map(2), np.zeros(2), 3)


def test_volume_gram_path_matches_svd(rng):
    net = MlpModel([3, 10, 2], seed=4).eval()
    emap = EncoderMap(net, Standardizer.identity(3))
    x = rng.standard_normal((20, 3))
    vol = volume_element_batch(emap, x, 2)
    sv = np.linalg.svd(emap.jacobian_batch(x), compute_uv=False)
    assert np.allclose(vol, np.prod(sv[:, :2], axis=1), rtol=1e-12)


def test_volume_invariant_under_latent_rotation(rng):
    net = MlpModel([3, 8, 2], seed=6).eval()
    base = EncoderMap(net, Standardizer.identity(3))
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    class Rotated:
        ambient_dim, latent_dim = 3, 2

        def jacobian_batch(self, x):
            return np.einsum("ij,njk->nik", rot, base.jacobian_batch(x))

    x = rng.standard_normal((10, 3))
    assert np.allclose(
        volume_element_batch(base, x, 2),
        volume_element_batch(Rotated(), x, 2),
        rtol=1e-9,
    )


def test_log_volume_gradient_constant_jacobian(linear_map):
    emap = linear_map(np.array([[2.0, 0.0, 1.0], [0.0, 1.0, 0.5]]))
    g = log_volume_gradient(emap, np.array([0.3, -0.2, 0.9]), 2)
    assert np.allclose(g, 0.0, atol=1e-9)


def test_log_volume_gradient_exp_map():
    g = log_volume_gradient(ExpMap(), np.array([0.4, 1.0, -2.0]), 2)
    assert np.allclose(g, [1.0, 0.0, 0.0], atol=1e-6)


def test_log_volume_gradient_finite_on_trained_nets(rng):
    net = MlpModel([3, 12, 6, 2], seed=8).eval()
    emap = EncoderMap(net, Standardizer.identity(3))
    g = log_volume_gradient(emap, rng.standard_normal(3), 2)
    assert np.all(np.isfinite(g))


def test_log_volume_gradient_degenerate_raises(linear_map):
    emap = linear_map(np.zeros((2, 2)))
    with pytest.raises(DegenerateJacobianError):
        log_volume_gradient(emap, np.zeros(2), 2)


def test_warped_metric_dominates_plain(rng, identity_map):
    # adding the deviation row can only grow X^T g X
    from geowarp.scorers import GpVarianceScorer, WarpedEncoder

    pts = rng.standard_normal((30, 3))
    gp = GpVarianceScorer.from_data(pts, sigma=0.8, seed=0)
    plain = identity_map(3)
    warped = WarpedEncoder(plain, gp, beta=10.0)
    for _ in range(10):
        x = rng.standard_normal(3)
        g_plain = pullback_metric(plain, x).g
        g_warp = pullback_metric(warped, x, kind="warped").g
        v = rng.standard_normal(3)
        assert v @ g_warp @ v >= v @ g_plain @ v - 1e-12


def test_export_metric_csv(tmp_path, linear_map):
    emap = linear_map(np.array([[2.0, 0.0], [0.0, 1.0]]))
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    path = tmp_path / "metric.csv"
    export_metric_csv(emap, pts, 2, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x0,x1,g00,g01,g10,g11,volume_element"
    row = [float(v) for v in lines[1].split(",")]
    assert row[2:6] == [4.0, 0.0, 0.0, 1.0]
    assert row[6] == 2.0
