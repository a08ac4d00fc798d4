import numpy as np
import pytest

from hdgcd.fespace import (DofMap, EdgeBasis, ElementBasis, build_dofmap,
                           eval_basis, project_all_elements, project_edge,
                           project_element, quad_edge, quad_triangle)
from hdgcd.mesh import build_uniform_triangulation, dirichlet_where


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_element_basis_partition_of_unity(degree):
    basis = ElementBasis(degree)
    assert basis.dim == (degree + 1) * (degree + 2) // 2
    rng = np.random.default_rng(3)
    pts = rng.random((50, 2)) * 0.5  # inside the reference triangle
    vals = basis.values(pts)
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-12)
    grads = basis.gradients(pts)
    np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_element_basis_nodal(degree):
    basis = ElementBasis(degree)
    vals = basis.values(basis.nodes)
    np.testing.assert_allclose(vals, np.eye(basis.dim), atol=1e-12)


def test_degree_one_nodes_are_vertices():
    basis = ElementBasis(1)
    np.testing.assert_allclose(basis.nodes,
                               [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_element_basis_gradients_match_fd():
    basis = ElementBasis(3)
    pts = np.array([[0.2, 0.3], [0.1, 0.05], [0.4, 0.4]])
    grads = basis.gradients(pts)
    h = 1e-6
    for d, shift in enumerate(np.eye(2) * h):
        fd = (basis.values(pts + shift) - basis.values(pts - shift)) / (2 * h)
        np.testing.assert_allclose(grads[:, :, d], fd, atol=1e-8)


def test_element_basis_second_derivatives_match_fd():
    basis = ElementBasis(3)
    pts = np.array([[0.25, 0.25], [0.1, 0.6]])
    sec = basis.second_derivatives(pts)  # (np, dim, 3): xx, xy, yy
    h = 1e-5
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    fxx = (basis.values(pts + ex) - 2 * basis.values(pts) + basis.values(pts - ex)) / h**2
    fyy = (basis.values(pts + ey) - 2 * basis.values(pts) + basis.values(pts - ey)) / h**2
    fxy = (basis.values(pts + ex + ey) - basis.values(pts + ex - ey)
           - basis.values(pts - ex + ey) + basis.values(pts - ex - ey)) / (4 * h**2)
    np.testing.assert_allclose(sec[:, :, 0], fxx, atol=1e-4)
    np.testing.assert_allclose(sec[:, :, 1], fxy, atol=1e-4)
    np.testing.assert_allclose(sec[:, :, 2], fyy, atol=1e-4)


def test_element_basis_rejects_bad_degree():
    with pytest.raises(ValueError):
        ElementBasis(0)
    with pytest.raises(ValueError):
        ElementBasis(11)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_edge_basis_nodal_and_unity(degree):
    eb = EdgeBasis(degree)
    assert eb.dim == degree + 1
    t = np.linspace(0.0, 1.0, 7)
    np.testing.assert_allclose(eb.values(t).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(eb.values(eb.nodes), np.eye(eb.dim), atol=1e-12)


def test_eval_basis_rejects_outside_points():
    basis = ElementBasis(2)
    with pytest.raises(ValueError):
        eval_basis(basis, np.array([[1.2, 0.3]]))


def test_triangle_quadrature_exactness():
    # total weight is the reference area
    for order in (1, 2, 4, 8):
        rule = quad_triangle(order)
        assert (rule.weights > 0).all()
        assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    # monomial integrals over the reference triangle:
    # int x^p y^q = p! q! / (p + q + 2)!
    from math import factorial
    for order in (3, 5, 10):
        rule = quad_triangle(order)
        for p in range(order + 1):
            for q in range(order + 1 - p):
                exact = factorial(p) * factorial(q) / factorial(p + q + 2)
                got = (rule.weights * rule.points[:, 0] ** p
                       * rule.points[:, 1] ** q).sum()
                assert got == pytest.approx(exact, rel=1e-12), (order, p, q)


def test_edge_quadrature_exactness():
    rule = quad_edge(2)
    got = (rule.weights * rule.points ** 2).sum()
    assert got == pytest.approx(1.0 / 3.0, rel=1e-14)
    for order in (1, 4, 9):
        rule = quad_edge(order)
        for p in range(order + 1):
            assert (rule.weights * rule.points ** p).sum() == pytest.approx(
                1.0 / (p + 1), rel=1e-12)


def test_quadrature_order_bounds():
    with pytest.raises(ValueError):
        quad_triangle(-1)
    with pytest.raises(ValueError):
        quad_triangle(61)
    with pytest.raises(ValueError):
        quad_edge(61)


def test_dofmap_counts_dg():
    mesh = build_uniform_triangulation(4)
    for k in (1, 2, 3):
        dm = build_dofmap(mesh, k)
        ndof = (k + 1) * (k + 2) // 2
        assert dm.n_interior == mesh.n_elements * ndof
        n_interior_edges = mesh.n_edges - mesh.boundary_edges.size
        # all-Dirichlet boundary: only interior edges carry active dofs
        assert dm.n_trace_active == n_interior_edges * (k + 1)
        assert dm.n_total == dm.n_interior + dm.n_trace_active


def test_dofmap_dirichlet_constrained():
    mesh = build_uniform_triangulation(3)
    dm = build_dofmap(mesh, 2)
    for e in mesh.boundary_edges:
        assert (dm.edge_dofs[e] == -1).all()
    gids = dm.edge_dofs[dm.edge_dofs >= 0]
    assert sorted(gids.tolist()) == list(range(dm.n_trace_active))


def test_dofmap_neumann_edges_off_skeleton():
    rule = dirichlet_where(lambda x, y: x < 1e-12)
    mesh = build_uniform_triangulation(3, rule)
    dm = build_dofmap(mesh, 1)
    for e in mesh.boundary_edges:
        x = mesh.edge_midpoints[e, 0]
        assert (dm.edge_dofs[e] == -1).all()
        if x > 1e-12:
            assert e not in set(dm.skeleton_edges.tolist())


def test_dofmap_cg_counts():
    mesh = build_uniform_triangulation(4)
    dm = build_dofmap(mesh, 1, "cg")
    # interior vertices only; boundary vertices touch Dirichlet edges
    assert dm.n_trace_active == (4 - 1) ** 2
    with pytest.raises(ValueError):
        build_dofmap(mesh, 2, "cg")
    with pytest.raises(ValueError):
        build_dofmap(mesh, 1, "mixed")


def test_dofmap_cg_shares_vertices():
    mesh = build_uniform_triangulation(3)
    dm = build_dofmap(mesh, 1, "cg")
    for e in dm.skeleton_edges:
        a, b = mesh.edges[e]
        assert dm.edge_dofs[e, 0] == dm.vertex_dofs[a]
        assert dm.edge_dofs[e, 1] == dm.vertex_dofs[b]


def test_element_trace_dofs_layout():
    mesh = build_uniform_triangulation(2)
    dm = build_dofmap(mesh, 1)
    gids = dm.element_trace_dofs(0)
    assert gids.shape == (6,)
    np.testing.assert_array_equal(
        gids.reshape(3, 2), dm.edge_dofs[mesh.elem_edges[0]])


def test_project_element_reproduces_polynomials():
    mesh = build_uniform_triangulation(2)
    basis = ElementBasis(2)
    coef = project_element(lambda x, y: x * y + 2.0 * x - y, mesh, 3, basis)
    nodes_phys = (mesh.vertices[mesh.triangles[3, 0]]
                  + basis.nodes @ mesh.jacobians[3].T)
    expect = nodes_phys[:, 0] * nodes_phys[:, 1] + 2 * nodes_phys[:, 0] - nodes_phys[:, 1]
    np.testing.assert_allclose(coef, expect, atol=1e-12)


def test_project_all_elements_matches_single():
    mesh = build_uniform_triangulation(3)
    basis = ElementBasis(1)
    f = lambda x, y: np.sin(x) * np.cos(y)
    all_coef = project_all_elements(f, mesh, basis)
    for t in (0, 7, 12):
        np.testing.assert_allclose(all_coef[t], project_element(f, mesh, t, basis),
                                   atol=1e-13)


def test_edge_projection_error_oracle():
    # L2-projection error of f(x, y) = x^2 onto P1 on a horizontal edge of
    # length h: the quadratic Legendre component gives h^{5/2} / sqrt(180),
    # observed rate 2.5 under refinement.
    eb = EdgeBasis(1)
    rule = quad_edge(12)
    errors, hs = [], []
    for n in (2, 4, 8, 16):
        mesh = build_uniform_triangulation(n)
        h = 1.0 / n
        # bottom-left horizontal boundary edge: vertices 0 and 1
        e = int(np.nonzero((mesh.edges[:, 0] == 0) & (mesh.edges[:, 1] == 1))[0][0])
        coef = project_edge(lambda x, y: x ** 2, mesh, e, eb)
        pts = mesh.vertices[0] + rule.points[:, None] * (mesh.vertices[1] - mesh.vertices[0])
        vals = eb.values(rule.points) @ coef
        err = np.sqrt(h * (rule.weights * (pts[:, 0] ** 2 - vals) ** 2).sum())
        assert err == pytest.approx(h ** 2.5 / np.sqrt(180.0), rel=1e-10)
        errors.append(err)
        hs.append(h)
    rates = np.log(np.array(errors[:-1]) / errors[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    np.testing.assert_allclose(rates, 2.5, atol=1e-9)
