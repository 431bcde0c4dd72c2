import numpy as np
import pytest
from scipy.integrate import solve_ivp

from riccilab.errors import JacobianCollapse
from riccilab.fields import MetricField, ScalarField, SymTensorField, TorusGrid, VectorField
from riccilab.gauge import (
    DiffeoMap,
    discrete_divergence,
    integrate_diffeo,
    interpolate_periodic,
    pullback_metric,
    slice_project,
    sym_derivative_matrix,
    tensor_weight_matrix,
)
from riccilab.geometry import gradient_vector, max_ricci_norm

from conftest import random_metric, random_tensor, trig_field

TWO_PI = 2 * np.pi


def test_interpolation_exact_at_nodes_and_fourth_order(rng):
    errs = []
    for N in (16, 32):
        grid = TorusGrid((N, N))
        x, y = grid.coordinates()
        vals = np.sin(TWO_PI * x) * np.cos(TWO_PI * y)
        assert np.array_equal(interpolate_periodic(vals, grid, grid.coordinates()), vals)
        pts = np.random.default_rng(3).uniform(0, 1, size=(2, 200))
        exact = np.sin(TWO_PI * pts[0]) * np.cos(TWO_PI * pts[1])
        errs.append(np.abs(interpolate_periodic(vals, grid, pts) - exact).max())
    assert np.log2(errs[0] / errs[1]) > 3.5


def test_interpolation_wraps_periodically():
    grid = TorusGrid((16, 16))
    vals = trig_field(grid, np.random.default_rng(1))
    pts = np.array([[0.3, 0.7], [0.55, 0.05]])
    shifted = pts + np.array([[1.0, -2.0], [3.0, 1.0]])
    assert np.allclose(interpolate_periodic(vals, grid, pts), interpolate_periodic(vals, grid, shifted), atol=1e-12)


def test_identity_pullback_is_bitwise(rng):
    grid = TorusGrid((16, 16))
    g = random_metric(grid, rng, 0.2)
    phi = DiffeoMap.identity(grid)
    assert phi.jacobian_floor == 1.0
    assert np.array_equal(pullback_metric(phi, g).comps, g.comps)


def test_node_translation_is_a_roll(rng):
    grid = TorusGrid((16, 16))
    g = random_metric(grid, rng, 0.2)
    phi = DiffeoMap.translation(grid, [3 * grid.spacing[0], -2 * grid.spacing[1]])
    pulled = pullback_metric(phi, g)
    assert np.allclose(pulled.comps, np.roll(g.comps, (-3, 2), axis=(1, 2)), atol=1e-14)


def test_pullback_of_scaled_flat_and_of_flat_is_flat():
    grid = TorusGrid((32, 32))
    x, y = grid.coordinates()
    image = np.stack([x + 0.02 * np.sin(TWO_PI * y), y + 0.02 * np.cos(TWO_PI * x)])
    phi = DiffeoMap(grid, image)
    pulled = pullback_metric(phi, MetricField.flat(grid)).comps
    assert np.allclose(pullback_metric(phi, MetricField.flat(grid, 3.0)).comps, 3.0 * pulled, rtol=1e-14, atol=0)
    assert max_ricci_norm(pullback_metric(phi, MetricField.flat(grid))) < 0.05


def test_jacobian_collapse():
    grid = TorusGrid((16, 16))
    x, y = grid.coordinates()
    with pytest.raises(JacobianCollapse):
        DiffeoMap(grid, np.stack([x + 0.3 * np.sin(TWO_PI * x), y]))


def test_integrate_diffeo_matches_solve_ivp():
    grid = TorusGrid((16, 16))
    x, _ = grid.coordinates()
    X = gradient_vector(ScalarField(grid, 0.1 * np.sin(TWO_PI * x)), MetricField.flat(grid))
    tau = 0.01
    phi = integrate_diffeo(lambda t: X, 0.0, tau, DiffeoMap.identity(grid))

    def rhs(_, p):
        return interpolate_periodic(X.comps, grid, np.mod(p.reshape(2, -1), 1.0)).ravel()

    sol = solve_ivp(rhs, (0.0, tau), grid.coordinates().ravel(), method="DOP853", rtol=1e-12, atol=1e-14)
    oracle = np.mod(sol.y[:, -1].reshape(2, *grid.shape), 1.0)
    diff = np.abs(phi.image - oracle)
    assert np.minimum(diff, 1.0 - diff).max() < 1e-8


def test_forward_backward_returns_to_identity():
    grid = TorusGrid((16, 16))
    x, y = grid.coordinates()
    X = VectorField(grid, 0.2 * np.stack([np.sin(TWO_PI * y), np.cos(TWO_PI * x)]))
    fwd = integrate_diffeo(lambda t: X, 0.0, 0.05, DiffeoMap.identity(grid))
    back = integrate_diffeo(lambda t: -X, 0.0, 0.05, fwd)
    assert np.abs(back.displacement()).max() < 1e-9


def test_zero_field_keeps_map():
    grid = TorusGrid((8, 8))
    phi = DiffeoMap.translation(grid, [0.01, 0.02])
    out = integrate_diffeo(lambda t: VectorField.zeros(grid), 0.0, 0.1, phi)
    assert np.allclose(out.image, phi.image, rtol=0, atol=1e-15)


@pytest.mark.parametrize("curved", [False, True])
def test_slice_projection_properties(rng, curved):
    grid = TorusGrid((16, 16))
    g_hat = random_metric(grid, rng, 0.1) if curved else MetricField.flat(grid)
    h = random_tensor(grid, rng)
    p, omega = slice_project(h, g_hat)
    scale = np.abs(h.comps).max()
    assert np.abs(discrete_divergence(p, g_hat).comps).max() < 1e-8 * scale / min(grid.spacing)
    S = sym_derivative_matrix(g_hat)
    W = tensor_weight_matrix(g_hat)
    gauge = S @ omega.comps.ravel()
    assert np.allclose(h.comps.ravel(), p.comps.ravel() + gauge, atol=1e-13)
    cross = p.comps.ravel() @ (W @ gauge)
    assert abs(cross) < 1e-9 * np.sqrt(gauge @ (W @ gauge)) * np.sqrt(p.comps.ravel() @ (W @ p.comps.ravel()))
    again, _ = slice_project(p, g_hat)
    assert np.abs(again.comps - p.comps).max() < 1e-9 * scale


def test_pure_gauge_projects_to_zero(rng):
    grid = TorusGrid((16, 16))
    g_hat = MetricField.flat(grid)
    omega = np.stack([trig_field(grid, rng) for _ in range(2)])
    h = SymTensorField(grid, (sym_derivative_matrix(g_hat) @ omega.ravel()).reshape(3, *grid.shape))
    p, _ = slice_project(h, g_hat)
    assert np.abs(p.comps).max() <= 1e-8 * np.abs(h.comps).max()


def test_slice_projection_3d_flat(rng):
    grid = TorusGrid((8, 8, 8))
    g_hat = MetricField.flat(grid)
    p, _ = slice_project(random_tensor(grid, rng), g_hat)
    assert np.abs(discrete_divergence(p, g_hat).comps).max() < 1e-7
