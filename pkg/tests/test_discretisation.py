import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from crobstacle.discretisation import (SpaceTimeField, TimeGrid, build_cr, in_constraint_set,
                                       interpolate_initial, reconstruct_gradient,
                                       reconstruct_value)
from crobstacle.mesh import build_structured_triangulation
from crobstacle.quadrature import GAUSS2_NODES, GAUSS2_WEIGHTS, TRI7_BARY, TRI7_WEIGHTS, edge_average


def _gd(n, obstacle=None, T=1.0, steps=4):
    return build_cr(build_structured_triangulation(n), TimeGrid.uniform(T, steps), obstacle)


def _random_points(mesh, cell, k, rng):
    lam = rng.dirichlet(np.ones(3), size=k)
    return lam @ mesh.vertices[mesh.cells[cell]]


def _bary_oracle(mesh, cell, point):
    """Barycentric coordinates from a dense 3x3 solve."""
    P = mesh.vertices[mesh.cells[cell]]
    A = np.vstack([P.T, np.ones(3)])
    return np.linalg.solve(A, np.array([point[0], point[1], 1.0]))


# --- time grid -------------------------------------------------------------

def test_time_grid_uniform():
    g = TimeGrid.uniform(0.5, 4)
    assert g.n_steps == 4 and g.T == 0.5
    assert_allclose(g.steps, 0.125)
    assert g.interval(0.0) == 0 and g.interval(0.125) == 0 and g.interval(0.13) == 1
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.4])
    with pytest.raises(ValueError):
        TimeGrid([0.1, 0.5])


# --- obstacle averages -----------------------------------------------------

def test_gauss_rule_integrates_cubics():
    for p in range(4):
        assert_allclose(np.dot(GAUSS2_WEIGHTS, GAUSS2_NODES ** p), 1.0 / (p + 1), rtol=1e-14)


def test_obstacle_edge_average():
    mesh = build_structured_triangulation(1)
    bottom = int(np.flatnonzero((mesh.edges == [0, 1]).all(axis=1))[0])
    assert_allclose(edge_average(mesh, lambda x, y: np.full(np.shape(x), 2.5)), 2.5)
    assert_allclose(edge_average(mesh, lambda x, y: x, [bottom]), [0.5], rtol=1e-15)
    # dense 1D oracle for the quadratic: mean of x^2 on [0, 1]
    s = np.linspace(0, 1, 200001)
    oracle = np.trapezoid(s ** 2, s) if hasattr(np, "trapezoid") else np.trapz(s ** 2, s)
    assert_allclose(edge_average(mesh, lambda x, y: x ** 2, [bottom]), [oracle], atol=1e-9)
    assert_allclose(edge_average(mesh, lambda x, y: x ** 2, [bottom]), [1.0 / 3.0], rtol=1e-14)


def test_obstacle_must_be_nonnegative_on_boundary():
    with pytest.raises(ValueError, match="boundary"):
        _gd(2, obstacle=lambda x, y: x - 0.5)


def test_no_obstacle_is_unconstrained():
    gd = _gd(2)
    assert np.all(np.isinf(gd.obstacle_dofs))


# --- reconstructions -------------------------------------------------------

def test_constant_dofs_reproduce_constant_inside():
    # partition of unity: boundary edges count only through the full vector
    mesh = build_structured_triangulation(3)
    gd = build_cr(mesh, TimeGrid.uniform(1.0, 1))
    full = np.full(mesh.n_edges, 1.7)
    rng = np.random.default_rng(0)
    lam = rng.dirichlet(np.ones(3), size=10)
    vals = full[mesh.cell_edges] @ (1.0 - 2.0 * lam).T
    assert_allclose(vals, 1.7, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_affine_reproduction(n):
    """Interpolate then reconstruct w = 1 + 2x - 3y with edge values on the boundary."""
    mesh = build_structured_triangulation(n)
    gd = build_cr(mesh, TimeGrid.uniform(1.0, 1))
    w = lambda x, y: 1 + 2 * x - 3 * y
    mid = mesh.edge_midpoints
    full = w(mid[:, 0], mid[:, 1])
    rng = np.random.default_rng(n)
    for c in range(mesh.n_cells):
        pts = _random_points(mesh, c, 10, rng)
        lam = np.array([_bary_oracle(mesh, c, p) for p in pts])
        vals = (1.0 - 2.0 * lam) @ full[mesh.cell_edges[c]]
        assert_allclose(vals, w(pts[:, 0], pts[:, 1]), atol=1e-12)
        grad = full[mesh.cell_edges[c]] @ gd.basis_gradients[c]
        assert_allclose(grad, [2.0, -3.0], atol=1e-12)


def test_interior_interpolant_of_x_reproduces_x_on_interior_cells():
    gd = _gd(4)
    v = interpolate_initial(gd, lambda x, y: x)
    assert_allclose(v, gd.dof_midpoints[:, 0])
    mesh = gd.mesh
    interior_cells = [c for c in range(mesh.n_cells) if not mesh.boundary[mesh.cell_edges[c]].any()]
    assert interior_cells
    for c in interior_cells:
        p = mesh.barycenters[c] * 0.7 + mesh.vertices[mesh.cells[c, 0]] * 0.3
        assert_allclose(reconstruct_value(gd, v, c, p), p[0], atol=1e-14)
        assert_allclose(reconstruct_gradient(gd, v, c), [1.0, 0.0], atol=1e-13)


def test_quadratic_at_barycenter_matches_oracle():
    gd = _gd(2)
    mesh = gd.mesh
    v = interpolate_initial(gd, lambda x, y: x ** 2)
    full = np.zeros(mesh.n_edges)
    full[gd.dof_edges] = v
    for c in range(mesh.n_cells):
        b = mesh.barycenters[c]
        lam = _bary_oracle(mesh, c, b)
        expected = sum(full[mesh.cell_edges[c, i]] * (1 - 2 * lam[i]) for i in range(3))
        assert_allclose(reconstruct_value(gd, v, c, b), expected, atol=1e-14)


def test_zero_and_constant_gradient():
    gd = _gd(3)
    assert_allclose(gd.cell_gradients(np.zeros(gd.n_dofs)), 0.0)


def test_gradient_matches_finite_differences():
    gd = _gd(2)
    v = np.random.default_rng(3).normal(size=gd.n_dofs)
    h = 1e-6
    for c in range(gd.mesh.n_cells):
        b = gd.mesh.barycenters[c]
        fd = [(reconstruct_value(gd, v, c, b + h * e) - reconstruct_value(gd, v, c, b - h * e)) / (2 * h)
              for e in np.eye(2)]
        assert_allclose(reconstruct_gradient(gd, v, c), fd, atol=1e-6)


def test_reconstruct_value_rejects_outside_point():
    gd = _gd(2)
    with pytest.raises(ValueError):
        reconstruct_value(gd, np.zeros(gd.n_dofs), 0, (0.9, 0.9))


def test_discrete_field_matches_reconstruct_value():
    gd = _gd(3)
    v = np.random.default_rng(4).normal(size=gd.n_dofs)
    f = gd.field(v)
    mesh = gd.mesh
    pts = mesh.barycenters
    assert_allclose(f(pts[:, 0], pts[:, 1]),
                    [reconstruct_value(gd, v, c, pts[c]) for c in range(mesh.n_cells)], atol=1e-14)


# --- interpolation with obstacle -------------------------------------------

def test_interpolate_zero_and_clamp():
    gd = _gd(3, obstacle=lambda x, y: np.full(np.shape(x), 0.5))
    z = interpolate_initial(gd, lambda x, y: np.zeros(np.shape(x)), clamp_to_obstacle=True)
    assert_array_equal(z, 0.0)
    assert in_constraint_set(gd, z)
    one = interpolate_initial(gd, lambda x, y: np.ones(np.shape(x)), clamp_to_obstacle=True)
    assert_array_equal(one, 0.5)


@given(st.floats(0.0, 2.0), st.floats(-3.0, 3.0), st.integers(1, 6))
def test_clamped_interpolant_is_feasible(c, amp, n):
    gd = _gd(n, obstacle=lambda x, y: c + 0.3 * x * y)
    v = interpolate_initial(gd, lambda x, y: amp * np.sin(3 * x + y), clamp_to_obstacle=True)
    assert np.all(v <= gd.obstacle_dofs)


# --- space-time fields -----------------------------------------------------

def test_constant_in_time_has_zero_derivative():
    gd = _gd(2, steps=3)
    v = np.random.default_rng(0).normal(size=gd.n_dofs)
    f = SpaceTimeField(gd, np.tile(v, (4, 1)))
    assert_array_equal(f.increments(), 0.0)


def test_linear_in_time_derivative_is_unit_vector():
    gd = _gd(2, T=1.0, steps=4)
    e = np.zeros(gd.n_dofs)
    e[2] = 1.0
    levels = np.array([k * 0.25 * e for k in range(5)])
    f = SpaceTimeField(gd, levels)
    for t in (0.1, 0.3, 0.99):
        assert_allclose(f.derivative(t), e, atol=1e-15)
    assert f.level_at(0.0) == 0 and f.level_at(0.25) == 1 and f.level_at(0.26) == 2


def test_derivative_telescopes():
    gd = _gd(3, T=1.0, steps=5)
    rng = np.random.default_rng(7)
    levels = rng.normal(size=(6, gd.n_dofs))
    phi = rng.normal(size=gd.n_dofs)
    mesh = gd.mesh

    def pair(u, w):
        # L2 pairing of two CR fields by 7-point quadrature
        lu = gd.full(u)[mesh.cell_edges] @ (1 - 2 * TRI7_BARY).T
        lw = gd.full(w)[mesh.cell_edges] @ (1 - 2 * TRI7_BARY).T
        return float(np.sum(mesh.areas[:, None] * TRI7_WEIGHTS * lu * lw))

    f = SpaceTimeField(gd, levels)
    lhs = sum(dt * pair(d, phi) for dt, d in zip(gd.time_grid.steps, f.increments()))
    assert_allclose(lhs, pair(levels[-1] - levels[0], phi), rtol=1e-12)


def test_spacetime_rejects_wrong_level_count():
    gd = _gd(2, steps=3)
    with pytest.raises(ValueError):
        SpaceTimeField(gd, np.zeros((3, gd.n_dofs)))
