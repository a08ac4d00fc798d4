import numpy as np
import pytest

from hdgcd.assembly import ProblemSpec
from hdgcd.mesh import build_uniform_triangulation, dirichlet_where
from hdgcd.supg import assemble_supg, solve_supg, supg_tau
from hdgcd.analysis import error_l2


def test_tau_reference_value():
    # Pe = |b| / (2 eps) = 1, h = 1:  tau = 0.5 (coth 1 - 1)
    coth1 = (np.e ** 2 + 1.0) / (np.e ** 2 - 1.0)
    tau = supg_tau(1.0, 1.0, 0.5)
    assert tau == pytest.approx(0.5 * (coth1 - 1.0), rel=1e-15)
    assert tau == pytest.approx(0.15652, abs=5e-6)


def test_tau_small_peclet_series():
    # Pe = 5e-5 is below the series switch
    h, b = 0.25, 1.0
    eps = b / (2.0 * 5e-5)
    pe = 5e-5
    expect = (h / (2.0 * b)) * (pe / 3.0 - pe ** 3 / 45.0)
    assert supg_tau(h, b, eps) == pytest.approx(expect, rel=1e-15)
    # branch agreement at (almost) the same Peclet number on both sides of
    # the switch: the direct coth evaluation loses ~1e-7 to cancellation
    lo = supg_tau(1.0, 1.0, 1.0 / (2.0 * 1e-4 * (1.0 - 1e-9)))
    hi = supg_tau(1.0, 1.0, 1.0 / (2.0 * 1e-4 * (1.0 + 1e-9)))
    assert hi == pytest.approx(lo, rel=1e-6)


def test_tau_large_peclet_limit():
    # convection dominated: tau -> h / (2 |b|)
    tau = supg_tau(1.0, 1.0, 1e-12)
    assert tau == pytest.approx(0.5, rel=1e-11)
    # coth(50) - 1 is ~1e-43: both branches agree to machine precision
    lo = supg_tau(1.0, 1.0, 1.0 / (2.0 * 50.0 * (1.0 - 1e-9)))
    hi = supg_tau(1.0, 1.0, 1.0 / (2.0 * 50.0 * (1.0 + 1e-9)))
    assert abs(hi - lo) < 1e-10


def test_tau_degenerate_and_invalid():
    assert supg_tau(0.1, 0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        supg_tau(0.1, 1.0, 0.0)
    with pytest.raises(ValueError):
        supg_tau(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        supg_tau(0.1, -1.0, 1.0)


def test_tau_monotone_in_epsilon():
    taus = [supg_tau(0.1, 1.0, eps) for eps in (1.0, 1e-1, 1e-2, 1e-3, 1e-6)]
    assert all(a < b for a, b in zip(taus, taus[1:]))
    assert taus[-1] <= 0.05  # capped by h / (2 |b|)


def test_supg_reproduces_linear_solution():
    rule = dirichlet_where(lambda x, y: x < 1e-12)
    prob = ProblemSpec(
        epsilon=1.0,
        b=lambda x, y: (np.ones_like(x), np.zeros_like(x)),
        f=lambda x, y: 1.0 + x,
        c=lambda x, y: np.ones_like(x),
        g_N=lambda x, y: np.where(x > 1.0 - 1e-12, 1.0, 0.0),
        boundary=rule, rho0=1.0)
    mesh = build_uniform_triangulation(4, rule)
    sol = solve_supg(prob, mesh)
    assert error_l2(sol, lambda x, y: x) < 1e-12
    x_v = mesh.vertices[:, 0]
    np.testing.assert_allclose(sol.nodal, x_v, atol=1e-12)


def test_supg_zero_at_dirichlet_vertices():
    from hdgcd.problems import case_smooth
    case = case_smooth(1e-3)
    mesh = build_uniform_triangulation(5, case.problem.boundary)
    sol = solve_supg(case.problem, mesh)
    on_boundary = ((mesh.vertices[:, 0] < 1e-12) | (mesh.vertices[:, 0] > 1 - 1e-12)
                   | (mesh.vertices[:, 1] < 1e-12) | (mesh.vertices[:, 1] > 1 - 1e-12))
    np.testing.assert_array_equal(sol.nodal[on_boundary], 0.0)
    assert sol.info["dofs_total"] == (5 - 1) ** 2
    assert sol.u.shape == (mesh.n_elements, 3)


def test_galerkin_limit_matches_hand_assembly():
    # tau_scale = 0 must reproduce the plain P1 Galerkin system; compare
    # against a direct hand assembly with analytic P1 element matrices
    mesh = build_uniform_triangulation(3)
    eps, bvec, c_val, f_val = 0.7, np.array([0.3, -0.2]), 2.0, 1.5
    prob = ProblemSpec(
        epsilon=eps,
        b=lambda x, y: (np.full_like(x, bvec[0]), np.full_like(x, bvec[1])),
        f=lambda x, y: np.full_like(x, f_val),
        c=lambda x, y: np.full_like(x, c_val), rho0=2.0)
    A, rhs, free = assemble_supg(prob, mesh, tau_scale=0.0)

    nv = mesh.n_vertices
    dense = np.zeros((nv, nv))
    load = np.zeros(nv)
    for t in range(mesh.n_elements):
        vid = mesh.triangles[t]
        p = mesh.vertices[vid]
        area = mesh.areas[t]
        # grad of barycentric coordinate i: perpendicular of the opposite
        # edge, scaled by 1 / (2 area)
        g = np.empty((3, 2))
        for i in range(3):
            e = p[(i + 2) % 3] - p[(i + 1) % 3]
            g[i] = np.array([-e[1], e[0]]) / (2.0 * area)
        stiff = eps * area * (g @ g.T)
        mass = c_val * area / 12.0 * (np.ones((3, 3)) + np.eye(3))
        conv = area / 3.0 * np.outer(np.ones(3), g @ bvec)
        dense[np.ix_(vid, vid)] += stiff + mass + conv
        load[vid] += f_val * area / 3.0
    np.testing.assert_allclose(A.toarray(), dense[np.ix_(free, free)], atol=1e-13)
    np.testing.assert_allclose(rhs, load[free], atol=1e-14)


def test_supg_differs_from_galerkin_when_stabilized():
    from hdgcd.problems import case_layer
    case = case_layer(1e-6)
    mesh = build_uniform_triangulation(8, case.problem.boundary)
    stab = solve_supg(case.problem, mesh, quad_order=case.quad_order)
    plain = solve_supg(case.problem, mesh, quad_order=case.quad_order, tau_scale=0.0)
    gap = np.abs(stab.nodal - plain.nodal).max()
    assert gap > 0.01
    # the stabilized solution is much tamer in the layer
    assert np.abs(stab.nodal).max() < np.abs(plain.nodal).max()


def test_supg_rejects_bad_problem():
    prob = ProblemSpec(
        epsilon=1.0,
        b=lambda x, y: (np.ones_like(x), np.zeros_like(x)),
        f=lambda x, y: np.zeros_like(x), rho0=1.0)  # actual rho = 0
    mesh = build_uniform_triangulation(2)
    with pytest.raises(ValueError):
        solve_supg(prob, mesh)
