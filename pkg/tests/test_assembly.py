import numpy as np
import pytest

from miscible.assembly import (
    CoefficientSet,
    assemble_concentration,
    assemble_mixed,
    characteristic_feet,
    quadrature_data,
)
from miscible.errors import CoefficientOutOfBounds, KindMismatch, PointOutsideDomain
from miscible.linalg import divergence_defect, is_symmetric, solve_saddle
from miscible.mesh import build_uniform_mesh
from miscible.norms import convergence_order, hdiv_error, l2_error_vector
from miscible.problems import dispersion, get_problem
from miscible.spaces import Field, function_space, interpolate_p1, interpolate_rt


def _velocity(x, y):
    return np.stack([np.sin(np.pi * x) * np.cos(np.pi * y), -np.cos(np.pi * x) * np.sin(np.pi * y)], axis=-1)


def test_quadrature_data_integrates_one(mesh4):
    qd = quadrature_data(mesh4, 5)
    assert qd.dx.sum() == pytest.approx(1.0)
    assert qd.points.shape == (mesh4.num_elements * 7, 2)
    assert qd.per_element(qd.dx).shape == (mesh4.num_elements, 7)


def test_mixed_blocks(mesh4):
    problem = get_problem("paper2d")
    c = interpolate_p1(mesh4, lambda x, y: problem.exact_c(x, y, 0.0))
    system = assemble_mixed(mesh4, problem.coeffs, c, 0.0)
    assert system.A.shape == (mesh4.num_edges, mesh4.num_edges)
    assert system.B.shape == (mesh4.num_elements, mesh4.num_edges)
    assert is_symmetric(system.A)
    assert np.all(system.A.diagonal() > 0.0)
    np.testing.assert_allclose(system.mean_constraint, mesh4.areas)
    np.testing.assert_array_equal(system.essential, mesh4.boundary_edges)


def test_divergence_block_integrates_divergence(mesh4):
    system = assemble_mixed(mesh4, get_problem("constant").coeffs, interpolate_p1(mesh4, lambda x, y: 1.0 + 0 * x), 0.0)
    u = interpolate_rt(mesh4, "RT0", lambda x, y: np.stack([x, y], axis=-1))
    np.testing.assert_allclose(system.B @ u.coeffs, 2.0 * mesh4.areas)


@pytest.mark.parametrize("order", [0, 1])
def test_divergence_identity_holds_after_solve(mesh4, order):
    problem = get_problem("linear_darcy")
    c = interpolate_p1(mesh4, lambda x, y: problem.exact_c(x, y, 0.3))
    system = assemble_mixed(mesh4, problem.coeffs, c, 0.3, order=order)
    sol = solve_saddle(system)
    assert divergence_defect(system, sol).max() <= 1e-10 * (1.0 + system.source_sup)
    # the multiplier only absorbs the quadrature error of the compatible source
    assert abs(sol.multiplier) < 1e-2


def test_mixed_rejects_wrong_kinds(mesh4):
    coeffs = get_problem("constant").coeffs
    p0 = Field(function_space(mesh4, "P0"), np.ones(mesh4.num_elements))
    with pytest.raises(KindMismatch):
        assemble_mixed(mesh4, coeffs, p0, 0.0)
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + 0 * x)
    with pytest.raises(KindMismatch):
        assemble_mixed(mesh4, coeffs, c, 0.0, order=2)


def test_viscosity_bounds_are_checked(mesh4):
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + 0 * x)
    negative = CoefficientSet(mu=lambda c: -np.ones_like(c), D=dispersion(1.0))
    with pytest.raises(CoefficientOutOfBounds):
        assemble_mixed(mesh4, negative, c, 0.0)
    bounded = CoefficientSet(mu=lambda c: 100.0 * np.ones_like(c), D=dispersion(1.0), mu0=10.0)
    with pytest.raises(CoefficientOutOfBounds):
        assemble_mixed(mesh4, bounded, c, 0.0)


def test_concentration_matrix(mesh4):
    coeffs = get_problem("paper2d").coeffs
    u = interpolate_rt(mesh4, "RT0", _velocity)
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + x * y)
    tau = 0.05
    K, rhs = assemble_concentration(mesh4, coeffs, u, c, tau, tau)
    assert is_symmetric(K)
    assert np.all(K.diagonal() > 0.0)
    # stiffness annihilates constants and there is no sink
    w = function_space(mesh4, "P1").mean_weights()
    np.testing.assert_allclose(K @ np.ones(mesh4.num_nodes), w / tau, rtol=1e-12)
    assert rhs.shape == (mesh4.num_nodes,)


def test_constant_is_transported_unchanged(mesh4):
    coeffs = get_problem("constant").coeffs
    u = interpolate_rt(mesh4, "RT0", _velocity)
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + 0 * x)
    tau = 0.1
    K, rhs = assemble_concentration(mesh4, coeffs, u, c, tau, tau)
    np.testing.assert_allclose(rhs, K @ np.ones(mesh4.num_nodes), rtol=1e-12)


def test_dispersion_must_be_positive(mesh4):
    coeffs = CoefficientSet(mu=lambda c: np.ones_like(c), D=lambda u: -dispersion(1.0)(u))
    u = interpolate_rt(mesh4, "RT0", _velocity)
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + 0 * x)
    with pytest.raises(CoefficientOutOfBounds):
        assemble_concentration(mesh4, coeffs, u, c, 0.1, 0.1)


def test_concentration_rejects_bad_input(mesh4):
    coeffs = get_problem("constant").coeffs
    u = interpolate_rt(mesh4, "RT0", _velocity)
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + 0 * x)
    with pytest.raises(ValueError):
        assemble_concentration(mesh4, coeffs, u, c, 0.0, 0.0)
    with pytest.raises(KindMismatch):
        assemble_concentration(mesh4, coeffs, c, c, 0.1, 0.1)


def test_characteristic_feet(mesh4):
    points = np.array([[0.3, 0.4], [0.05, 0.9]])
    elems, bary = characteristic_feet(mesh4, points, np.zeros((2, 2)), 0.1)
    np.testing.assert_allclose(np.einsum("nk,nkd->nd", bary, mesh4.nodes[mesh4.elements[elems]]), points)

    velocity = np.array([[0.0, 0.0], [1.0, 0.0]])
    elems, bary = characteristic_feet(mesh4, points, velocity, 0.5, clamp=True)
    np.testing.assert_allclose(np.einsum("nk,nkd->nd", bary, mesh4.nodes[mesh4.elements[elems]])[1], [0.0, 0.9], atol=1e-14)
    with pytest.raises(PointOutsideDomain):
        characteristic_feet(mesh4, points, velocity, 0.5, clamp=False)


def test_rt0_mass_matrix_on_two_triangles():
    mesh = build_uniform_mesh(1)
    coeffs = CoefficientSet(mu=lambda c: np.ones_like(c), D=dispersion(1.0))
    c = interpolate_p1(mesh, lambda x, y: 1.0 + 0 * x)
    A = assemble_mixed(mesh, coeffs, c, 0.0).A.toarray()

    # psi_e = s_e |e| / (2|T|) (x - P_e), P_e the vertex opposite e
    expected = np.zeros((mesh.num_edges, mesh.num_edges))
    for T, verts in enumerate(mesh.elements):
        P = mesh.nodes[verts]
        g = P.mean(axis=0)
        spread = np.sum((P - g) ** 2) / 12.0
        edges = mesh.elem_edges[T]
        opposite = [P[~np.isin(verts, mesh.edges[e])][0] for e in edges]
        scale = mesh.elem_signs[T] * mesh.edge_lengths[edges] / (2.0 * mesh.areas[T])
        for i in range(3):
            for j in range(3):
                second_moment = (g - opposite[i]) @ (g - opposite[j]) + spread
                expected[edges[i], edges[j]] += scale[i] * scale[j] * mesh.areas[T] * second_moment
    np.testing.assert_allclose(A, expected, rtol=1e-12, atol=1e-14)


def test_rt0_darcy_errors_are_first_order():
    problem = get_problem("linear_darcy")
    errs_l2, errs_hdiv = [], []
    for M in (8, 16, 32):
        mesh = build_uniform_mesh(M)
        c = interpolate_p1(mesh, lambda x, y: problem.exact_c(x, y, 0.0))
        sol = solve_saddle(assemble_mixed(mesh, problem.coeffs, c, 0.0))
        u = Field(function_space(mesh, "RT0"), sol.u)
        h = np.sqrt(2.0) / M
        errs_l2.append((h, l2_error_vector(u, problem.exact_u, 0.0)))
        errs_hdiv.append((h, hdiv_error(u, problem.exact_u, problem.exact_divu, 0.0)))
    for errs in (errs_l2, errs_hdiv):
        assert all(0.85 <= r <= 1.15 for r in convergence_order(errs))


def test_characteristic_rhs_follows_the_feet():
    # M = 10 puts the kink of max(x - 0.1, 0) on a grid line
    mesh = build_uniform_mesh(10)
    coeffs = CoefficientSet(mu=lambda c: np.ones_like(c), D=dispersion(1.0))
    u = interpolate_rt(mesh, "RT0", lambda x, y: np.stack([1.0 + 0 * x, 0 * y], axis=-1))
    c = interpolate_p1(mesh, lambda x, y: x)
    K1, rhs = assemble_concentration(mesh, coeffs, u, c, 0.1, 0.1, clamp=True)
    K2, _ = assemble_concentration(mesh, coeffs, u, c, 0.05, 0.05, clamp=True)
    mass = (K2 - K1) / 10.0
    upstream = np.maximum(mesh.nodes[:, 0] - 0.1, 0.0)
    np.testing.assert_allclose(rhs, mass @ upstream / 0.1, rtol=1e-10, atol=1e-12)
    assert rhs.sum() * 0.1 == pytest.approx(0.405, rel=1e-10)
