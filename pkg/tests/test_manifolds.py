import numpy as np
import pytest

from geowarp import manifolds as mf
from geowarp.errors import ConnectivityError, ContractError, DomainError, ShapeError


# -- parameterizations ------------------------------------------------------


def test_hemisphere_origin():
    assert np.allclose(mf.parameterize("hemisphere", 0.0, 0.0), [0.0, 0.0, 1.0])


def test_saddle_point():
    assert np.allclose(mf.parameterize("saddle", 1.0, 1.0), [1.0, 1.0, 0.0])


def test_paraboloid_point():
    assert np.allclose(mf.parameterize("paraboloid", 1.0, 1.0), [1.0, 1.0, 2.0])


def test_unknown_kind_rejected():
    with pytest.raises(DomainError):
        mf.parameterize("sphere", 0.0, 0.0)


def test_hemisphere_domain_enforced():
    with pytest.raises(DomainError):
        mf.parameterize("hemisphere", 1.0, 0.5)


# -- volume elements -----------------------------------------------------------


def test_volume_element_table_values():
    assert mf.analytic_volume_element("hemisphere", 0.0, 0.0) == pytest.approx(1.0)
    assert mf.analytic_volume_element("saddle", 0.5, 0.5) == pytest.approx(np.sqrt(3.0))
    assert mf.analytic_volume_element("paraboloid", 0.0, 0.0) == pytest.approx(1.0)


def test_volume_element_hemisphere_domain():
    with pytest.raises(DomainError):
        mf.analytic_volume_element("hemisphere", 0.9, 0.9)


def _fd_volume_element(kind, u, v, h=1e-6):
    ju = (mf.parameterize(kind, u + h, v) - mf.parameterize(kind, u - h, v)) / (2 * h)
    jv = (mf.parameterize(kind, u, v + h) - mf.parameterize(kind, u, v - h)) / (2 * h)
    jac = np.stack([ju, jv], axis=-1)
    gram = jac.T @ jac
    return np.sqrt(np.linalg.det(gram))


@pytest.mark.parametrize("kind", mf.KINDS)
def test_volume_element_matches_finite_difference_jacobian(kind, rng):
    (ulo, uhi), (vlo, vhi) = mf.default_bounds(kind)
    for _ in range(50):
        u = rng.uniform(ulo, uhi)
        v = rng.uniform(vlo, vhi)
        if kind == "hemisphere":
            if u * u + v * v >= 0.95:
                continue
        if kind == "ellipsoid" and (v < 0.05 or v > np.pi - 0.05):
            continue  # FD is ill-conditioned at the degenerate poles
        got = mf.analytic_volume_element(kind, u, v)
        want = _fd_volume_element(kind, u, v)
        assert got == pytest.approx(want, rel=1e-6)


# -- geodesic oracle -------------------------------------------------------------


def test_hemisphere_quarter_circle():
    L = mf.analytic_geodesic_length("hemisphere", np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    assert L == pytest.approx(np.pi / 2)


def test_hemisphere_pole_to_equator():
    L = mf.analytic_geodesic_length("hemisphere", np.array([1.0, 0, 0]), np.array([0, 0, 1.0]))
    assert L == pytest.approx(np.pi / 2)


def test_same_point_zero_for_any_kind():
    p = mf.parameterize("saddle", 0.3, -0.4)
    assert mf.analytic_geodesic_length("saddle", p, p) == 0.0


def test_saddle_has_no_closed_form():
    p0 = mf.parameterize("saddle", 0.1, 0.2)
    p1 = mf.parameterize("saddle", -0.3, 0.4)
    assert mf.analytic_geodesic_length("saddle", p0, p1) is None


def test_off_manifold_endpoint_rejected():
    with pytest.raises(DomainError):
        mf.analytic_geodesic_length("hemisphere", np.array([2.0, 0, 0]), np.array([0, 1.0, 0]))


# -- sampling -----------------------------------------------------------------------


def test_sample_manifold_points_on_surface(rng):
    for kind in mf.KINDS:
        cloud = mf.sample_manifold(kind, 100, seed=3)
        assert cloud.n == 100
        assert np.max(mf.implicit_residual(kind, cloud.points)) < 1e-9
        assert cloud.params is not None


def test_sample_manifold_deterministic():
    a = mf.sample_manifold("saddle", 50, seed=5)
    b = mf.sample_manifold("saddle", 50, seed=5)
    assert np.array_equal(a.points, b.points)


def test_imbalanced_sampler_respects_bounds():
    cloud = mf.sample_manifold("saddle", 500, mf.imbalanced_sampler(), seed=1)
    assert np.all(np.abs(cloud.params) <= 2.0)
    # center of mass pulled toward the Gaussian mean (1, 1)
    assert cloud.params.mean(axis=0)[0] > 0.3


def test_incompatible_sampler_rejected():
    sampler = mf.UniformSampler(bounds=((5.0, 6.0), (5.0, 6.0)))
    with pytest.raises(DomainError):
        mf.sample_manifold("hemisphere", 10, sampler, seed=0)


def test_sample_count_positive():
    with pytest.raises(ContractError):
        mf.sample_manifold("saddle", 0)


# -- perturb -------------------------------------------------------------------------


def test_perturb_identity_when_trivial():
    cloud = mf.sample_manifold("hemisphere", 30, seed=2)
    out = mf.perturb(cloud, 0.0, target_dim=3, seed=0, rotate=False)
    assert np.array_equal(out.points, cloud.points)


def test_perturb_rotation_preserves_distances(rng):
    cloud = mf.sample_manifold("saddle", 40, seed=2)
    out = mf.perturb(cloud, 0.0, target_dim=7, seed=3)
    d_before = np.linalg.norm(cloud.points[:, None] - cloud.points[None, :], axis=2)
    d_after = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=2)
    assert np.max(np.abs(d_before - d_after)) < 1e-9
    assert out.rotation.shape == (7, 7)
    assert np.max(np.abs(out.rotation.T @ out.rotation - np.eye(7))) < 1e-10


def test_perturb_noise_magnitude():
    cloud = mf.sample_manifold("hemisphere", 1000, seed=4)
    out = mf.perturb(cloud, 0.1, target_dim=3, seed=5, rotate=False)
    disp = np.abs(out.points - cloud.points)
    expected = 0.1 * np.sqrt(2.0 / np.pi)  # mean of |N(0, 0.1^2)|
    assert disp.mean() == pytest.approx(expected, rel=0.1)


def test_perturb_rejects_shrinking():
    cloud = mf.sample_manifold("hemisphere", 10, seed=0)
    with pytest.raises(ShapeError):
        mf.perturb(cloud, 0.0, target_dim=2)


def test_unrotated_undoes_rotation():
    cloud = mf.sample_manifold("paraboloid", 25, seed=7)
    out = mf.perturb(cloud, 0.0, target_dim=5, seed=8)
    back = out.unrotated()
    assert np.allclose(back[:, :3], cloud.points, atol=1e-10)
    assert np.allclose(back[:, 3:], 0.0, atol=1e-10)


# -- negatives ----------------------------------------------------------------------------


def test_negative_sample_shape_and_determinism():
    cloud = mf.sample_manifold("hemisphere", 200, seed=1)
    a = mf.negative_sample(cloud, 0.25, seed=9)
    b = mf.negative_sample(cloud, 0.25, seed=9)
    assert a.points.shape == cloud.points.shape
    assert np.array_equal(a.points, b.points)


def test_negative_sample_small_variance_stays_close():
    cloud = mf.sample_manifold("hemisphere", 100, seed=1)
    neg = mf.negative_sample(cloud, 1e-12, seed=0)
    assert np.max(np.abs(neg.points - cloud.points)) < 1e-4


def test_negative_sample_leaves_surface():
    cloud = mf.sample_manifold("hemisphere", 1000, seed=1)
    neg = mf.negative_sample(cloud, 0.25, seed=2)
    dists = mf.distance_to_surface("hemisphere", neg.points)
    assert dists.mean() > 0.1


def test_negative_sample_variance_positive():
    cloud = mf.sample_manifold("hemisphere", 10, seed=1)
    with pytest.raises(ContractError):
        mf.negative_sample(cloud, 0.0)


# -- graph distances -------------------------------------------------------------------


def test_collinear_points():
    cloud = mf.PointCloud(np.array([[0.0], [1.0], [2.0]]))
    dm = mf.graph_distances(cloud, k=2)
    assert dm.d[0, 2] == pytest.approx(2.0)


def test_equilateral_triangle():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    dm = mf.graph_distances(mf.PointCloud(pts), k=2)
    iu = np.triu_indices(3, 1)
    assert np.allclose(dm.d[iu], 1.0)


def test_circle_antipodal_distance():
    theta = np.linspace(0.0, 2 * np.pi, 100, endpoint=False)
    pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    dm = mf.graph_distances(mf.PointCloud(pts), k=4)
    assert dm.d[0, 50] == pytest.approx(np.pi, rel=0.02)


def test_disconnected_graph_reports_components():
    pts = np.vstack([np.random.default_rng(0).normal(0, 0.1, (5, 2)),
                     np.random.default_rng(1).normal(100, 0.1, (7, 2))])
    with pytest.raises(ConnectivityError) as err:
        mf.graph_distances(mf.PointCloud(pts), k=3)
    assert sorted(err.value.component_sizes) == [5, 7]


def test_k_too_small_rejected():
    cloud = mf.PointCloud(np.random.default_rng(0).standard_normal((10, 2)))
    with pytest.raises(ContractError):
        mf.graph_distances(cloud, k=1)


def test_triangle_inequality_on_knn_distances():
    cloud = mf.sample_manifold("saddle", 60, seed=3)
    dm = mf.graph_distances(cloud, k=6)
    d = dm.d
    n = d.shape[0]
    violation = np.max(d[:, None, :] - (d[:, :, None] + d[None, :, :]))
    assert violation <= 1e-9


def test_graph_converges_to_great_circle(rng):
    # k-NN shortest paths carry a systematic zig-zag stretch of a few
    # percent at k=10 regardless of N, so the 5% tolerance holds for the
    # average over pairs; individual pairs stay within 10%.
    cloud = mf.sample_manifold("hemisphere", 2000, seed=11)
    dm = mf.graph_distances(cloud, k=10)
    pairs = rng.choice(cloud.n, size=(20, 2), replace=False)
    rels = []
    for i, j in pairs:
        oracle = mf.analytic_geodesic_length("hemisphere", cloud.points[i], cloud.points[j])
        if oracle < 0.2:
            continue  # tiny arcs are dominated by hop quantization
        rel = abs(dm.d[i, j] - oracle) / oracle
        rels.append(rel)
        assert rel < 0.10
    assert np.mean(rels) < 0.05


# -- containers / io ---------------------------------------------------------------------


def test_pointcloud_roundtrip(tmp_path):
    cloud = mf.perturb(mf.sample_manifold("torus", 20, seed=6), 0.05, target_dim=5, seed=7)
    path = tmp_path / "cloud.csv"
    cloud.save(path)
    back = mf.PointCloud.load(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.params, cloud.params)
    assert back.manifold_kind == "torus"
    assert back.noise_sigma == pytest.approx(0.05)
    assert np.array_equal(back.rotation, cloud.rotation)


def test_distance_matrix_roundtrip(tmp_path):
    cloud = mf.sample_manifold("saddle", 15, seed=0)
    dm = mf.graph_distances(cloud, k=4)
    path = tmp_path / "d.csv"
    dm.save(path)
    back = mf.DistanceMatrix.load(path)
    assert np.array_equal(back.d, dm.d)


def test_distance_matrix_validation():
    with pytest.raises(ContractError):
        mf.DistanceMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))  # asymmetric
    with pytest.raises(ContractError):
        mf.DistanceMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))  # negative


def test_pointcloud_rejects_bad_rotation():
    with pytest.raises(ContractError):
        mf.PointCloud(np.ones((2, 2)), rotation=np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(ContractError):
        mf.PointCloud(np.array([[np.nan, 0.0]]))
