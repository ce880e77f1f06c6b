import numpy as np
import pytest

from geowarp.errors import ContractError, DomainError, OffManifoldEndpointError
from geowarp.geodesics import (
    Curve,
    GeodesicConfig,
    curve_energy,
    curve_length,
    fit_geodesic,
    new_bump_network,
)


def straight_curve(x0, x1, n_segments=30):
    bump = new_bump_network(len(x0), hidden=(8,), seed=0)  # zero output layer
    return Curve(np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64),
                 bump, n_segments=n_segments)


def test_endpoints_exact_regardless_of_bump(rng):
    bump = new_bump_network(3, hidden=(8,), seed=1)
    for w in bump.weights:
        w[...] = rng.standard_normal(w.shape)  # including the output layer
    for b in bump.biases:
        b[...] = rng.standard_normal(b.shape)
    bump.eval()
    c = Curve(np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.0, 5.0]), bump)
    assert np.array_equal(c.eval(0.0)[0], [1.0, 2.0, 3.0])
    assert np.array_equal(c.eval(1.0)[0], [-1.0, 0.0, 5.0])


def test_midpoint_without_bump():
    c = straight_curve([0.0, 0.0], [2.0, 4.0])
    assert np.allclose(c.eval(0.5)[0], [1.0, 2.0])


def test_constant_bump_gate_value():
    bump = new_bump_network(2, hidden=(4,), seed=0)
    bump.weights[0][...] = 0.0
    bump.biases[0][...] = 0.0
    bump.weights[1][...] = 0.0
    bump.biases[1][...] = np.array([1.0, -2.0])
    c = Curve(np.zeros(2), np.ones(2), bump)
    # gate(0.5) = 1, so midpoint shifts by exactly the constant bump
    assert np.allclose(c.eval(0.5)[0], [0.5 + 1.0, 0.5 - 2.0])


def test_t_domain_checked():
    c = straight_curve([0.0], [1.0])
    with pytest.raises(DomainError):
        c.eval(1.5)
    with pytest.raises(DomainError):
        c.eval(-0.1)


def test_bump_shape_validated():
    bump = new_bump_network(3, hidden=(4,), seed=0)
    with pytest.raises(ContractError):
        Curve(np.zeros(2), np.ones(2), bump)


def test_energy_zero_for_constant_curve(identity_map):
    c = straight_curve([1.0, 1.0], [1.0, 1.0])
    assert curve_energy(c, identity_map(2)) == pytest.approx(0.0, abs=1e-20)


def test_energy_of_straight_line_is_squared_length(identity_map):
    for m in (10, 30, 75):
        c = straight_curve([0.0, 0.0, 0.0], [3.0, 4.0, 0.0], n_segments=m)
        assert curve_energy(c, identity_map(3)) == pytest.approx(25.0, rel=1e-12)


def test_energy_penalizes_reparameterization(identity_map):
    # same chord with non-uniform speed has energy >= L^2
    bump = new_bump_network(1, hidden=(8, 8), seed=3)
    for w in bump.weights:
        w[...] = np.random.default_rng(0).standard_normal(w.shape) * 0.5
    bump.eval()
    c = Curve(np.array([0.0]), np.array([1.0]), bump, n_segments=40)
    assert curve_energy(c, __import__("conftest").IdentityMap(1)) >= 1.0 - 1e-12


def test_length_of_straight_line(identity_map):
    c = straight_curve([0.0, 0.0], [3.0, 4.0])
    assert curve_length(c, identity_map(2)) == pytest.approx(5.0)


def test_length_squared_at_most_energy(identity_map, rng):
    for seed in range(5):
        bump = new_bump_network(2, hidden=(8,), seed=seed)
        for w in bump.weights:
            w[...] = rng.standard_normal(w.shape) * 0.3
        bump.eval()
        c = Curve(rng.standard_normal(2), rng.standard_normal(2), bump, n_segments=20)
        emap = __import__("conftest").IdentityMap(2)
        assert curve_length(c, emap) ** 2 <= curve_energy(c, emap) + 1e-9


def test_fit_geodesic_straight_on_flat_map(identity_map):
    x0, x1 = np.zeros(2), np.array([1.0, 1.0])
    curve, history = fit_geodesic(
        x0, x1, identity_map(2), GeodesicConfig(steps=80, hidden=(8, 8), seed=0)
    )
    L = curve_length(curve, identity_map(2))
    assert L == pytest.approx(np.sqrt(2.0), rel=0.02)
    running_best = np.minimum.accumulate(history)
    assert np.all(np.diff(running_best) <= 0.0)


def test_fit_geodesic_endpoint_check():
    class FarScorer:
        def score(self, x):
            return np.array([10.0])

    class MapWithScorer:
        ambient_dim = latent_dim = 2
        scorer = FarScorer()

        def encode_node(self, tape, x):
            return x

    with pytest.raises(OffManifoldEndpointError):
        fit_geodesic(np.zeros(2), np.ones(2), MapWithScorer(),
                     GeodesicConfig(steps=5, eps=1.0))


def test_fit_geodesic_deterministic(identity_map):
    cfg = GeodesicConfig(steps=25, hidden=(8,), seed=4)
    c1, h1 = fit_geodesic(np.zeros(2), np.ones(2), identity_map(2), cfg)
    c2, h2 = fit_geodesic(np.zeros(2), np.ones(2), identity_map(2), cfg)
    assert h1 == h2
    assert np.array_equal(c1.points(), c2.points())


def test_fitted_length_at_least_latent_chord(rng):
    # any latent path is at least as long as the straight latent segment
    from conftest import LinearMap

    emap = LinearMap(rng.standard_normal((2, 3)))
    x0, x1 = rng.standard_normal(3), rng.standard_normal(3)
    curve, _ = fit_geodesic(x0, x1, emap, GeodesicConfig(steps=40, hidden=(8,), seed=1))
    chord = np.linalg.norm(emap.encode(x1) - emap.encode(x0))
    assert curve_length(curve, emap) >= chord - 1e-9
