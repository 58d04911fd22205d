from dataclasses import replace

import numpy as np
import pytest

from miscible.errors import ConfigError, ProblemInconsistent
from miscible.problems import PROBLEMS, dispersion, get_problem, residual_report, verify_problem


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_registered_problems_pass_the_residual_gate(name):
    report = verify_problem(get_problem(name))
    assert report.passed
    assert report.concentration <= 1e-5
    assert report.divergence <= 1e-6
    assert report.boundary_flux <= 1e-12


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_exact_velocity_has_no_normal_flux(name, rng):
    problem = get_problem(name)
    s = rng.uniform(0.0, 1.0, 50)
    t = 0.37
    zero, one = np.zeros_like(s), np.ones_like(s)
    for x, y, axis in [(zero, s, 0), (one, s, 0), (s, zero, 1), (s, one, 1)]:
        np.testing.assert_allclose(problem.exact_u(x, y, t)[:, axis], 0.0, atol=1e-12)


def test_wrong_forcing_is_caught():
    problem = get_problem("paper2d")
    broken = replace(problem, forcing_g=lambda x, y, t: problem.forcing_g(x, y, t) + 0.1)
    assert not residual_report(broken).passed
    with pytest.raises(ProblemInconsistent):
        verify_problem(broken)


def test_wrong_divergence_is_caught():
    problem = get_problem("linear_darcy")
    broken = replace(problem, forcing_f=lambda x, y, t: 1.01 * problem.forcing_f(x, y, t))
    with pytest.raises(ProblemInconsistent):
        verify_problem(broken)


def test_unknown_problem():
    with pytest.raises(ConfigError):
        get_problem("nope")


def test_dispersion_tensor():
    u = np.array([[3.0, 4.0], [0.0, 0.0]])
    D = dispersion(0.5, 0.1, 2.0)(u)
    expected = (0.5 + 0.1 * 25.0) * np.eye(2) + 2.0 * np.outer(u[0], u[0])
    np.testing.assert_allclose(D[0], expected)
    np.testing.assert_allclose(D[1], 0.5 * np.eye(2))


def test_smooth2d_solution_values():
    problem = get_problem("paper2d")
    # both fields vanish to their offsets on the boundary
    assert problem.exact_c(0.0, 0.3, 0.5) == pytest.approx(1.0)
    assert problem.exact_p(1.0, 0.3, 0.5) == pytest.approx(3.0)
    x, y, t = 0.5, 0.25, 1.0
    S = lambda s: np.sin(s * s) * (1.0 - s) ** 2
    assert problem.exact_c(x, y, t) == pytest.approx(1.0 + 20.0 * np.e * 2.0 * S(x) * S(y))


def test_constant_problem_is_at_rest():
    problem = get_problem("constant")
    x = np.linspace(0.0, 1.0, 7)
    np.testing.assert_allclose(problem.exact_c(x, x, 0.4), 1.0)
    np.testing.assert_allclose(problem.exact_u(x, x, 0.4), 0.0)
    np.testing.assert_allclose(problem.forcing_g(x, x, 0.4), 0.0)


def test_smooth2d_viscosity_grows_with_concentration():
    problem = get_problem("paper2d")
    c = np.array([0.0, 1.0, 1.5])
    np.testing.assert_allclose(problem.coeffs.mu(c), 1.0 + c * c)
    x, y, t = 0.3, 0.7, 0.8
    h = 1e-6
    grad_p = np.array([
        (problem.exact_p(x + h, y, t) - problem.exact_p(x - h, y, t)) / (2 * h),
        (problem.exact_p(x, y + h, t) - problem.exact_p(x, y - h, t)) / (2 * h),
    ])
    mobility = 1.0 / (1.0 + problem.exact_c(x, y, t) ** 2)
    np.testing.assert_allclose(problem.exact_u(x, y, t), -mobility * grad_p, rtol=1e-6, atol=1e-8)
