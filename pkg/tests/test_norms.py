import math

import numpy as np
import pytest
from pydantic import ValidationError

from miscible.errors import KindMismatch, NonPositiveError
from miscible.mesh import build_uniform_mesh
from miscible.norms import (
    ErrorRow,
    convergence_order,
    exact_mean,
    hdiv_error,
    l2_error_scalar,
    l2_error_vector,
    least_squares_order,
    mean_value,
)
from miscible.spaces import Field, function_space, interpolate_p1, interpolate_rt


def test_interpolant_of_linear_has_no_error(mesh4):
    c = interpolate_p1(mesh4, lambda x, y: 1.0 + x - 2.0 * y)
    assert l2_error_scalar(c, lambda x, y, t: 1.0 + x - 2.0 * y, 0.0) < 1e-14


def test_error_against_constant(mesh4):
    zero = Field(function_space(mesh4, "P1"), np.zeros(mesh4.num_nodes))
    assert l2_error_scalar(zero, lambda x, y, t: 3.0 + 0 * x, 0.0) == pytest.approx(3.0)
    # the mean is removed from both sides
    assert l2_error_scalar(zero, lambda x, y, t: 3.0 + 0 * x, 0.0, normalize_mean=True) == pytest.approx(0.0, abs=1e-14)


def test_p0_error_of_linear(mesh4):
    p = Field(function_space(mesh4, "P0"), np.zeros(mesh4.num_elements))
    err = l2_error_scalar(p, lambda x, y, t: x - 0.5, 0.0, normalize_mean=True)
    assert err == pytest.approx(math.sqrt(1.0 / 12.0))


def test_means(mesh4):
    c = interpolate_p1(mesh4, lambda x, y: x + 2.0 * y)
    assert mean_value(c) == pytest.approx(1.5)
    assert exact_mean(mesh4, lambda x, y, t: x * y * t, 2.0) == pytest.approx(0.5)


def test_vector_errors(mesh4):
    u = interpolate_rt(mesh4, "RT0", lambda x, y: np.stack([1.0 + x, 2.0 + y], axis=-1))
    exact = lambda x, y, t: np.stack([1.0 + x, 2.0 + y], axis=-1)
    assert l2_error_vector(u, exact, 0.0) < 1e-13
    assert hdiv_error(u, exact, lambda x, y, t: 2.0 + 0 * x, 0.0) < 1e-13
    # the divergence part only adds
    assert hdiv_error(u, exact, lambda x, y, t: 0 * x, 0.0) == pytest.approx(2.0)


def test_error_kind_checks(mesh4):
    c = interpolate_p1(mesh4, lambda x, y: x)
    u = interpolate_rt(mesh4, "RT0", lambda x, y: np.stack([x, y], axis=-1))
    with pytest.raises(KindMismatch):
        l2_error_scalar(u, lambda x, y, t: x, 0.0)
    with pytest.raises(KindMismatch):
        l2_error_vector(c, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)


def test_convergence_order():
    errs = [(1 / 8, 4e-2), (1 / 16, 1e-2), (1 / 32, 2.5e-3)]
    np.testing.assert_allclose(convergence_order(errs), [2.0, 2.0])
    assert least_squares_order(errs) == pytest.approx(2.0)


def test_order_of_non_halving_sequence():
    errs = [(0.3, 0.3**1.5), (0.1, 0.1**1.5), (0.07, 0.07**1.5)]
    np.testing.assert_allclose(convergence_order(errs), [1.5, 1.5])


def test_order_input_checks():
    with pytest.raises(NonPositiveError):
        convergence_order([(0.5, 1e-2), (0.25, 0.0)])
    with pytest.raises(NonPositiveError):
        least_squares_order([(0.5, float("nan")), (0.25, 1e-3)])
    with pytest.raises(ValueError):
        convergence_order([(0.5, 1e-2)])
    with pytest.raises(ValueError):
        convergence_order([(0.25, 1e-2), (0.5, 1e-3)])


def test_error_row_validation():
    row = ErrorRow(M=8, tau=1 / 64, err_c_L2=1e-2, err_u_L2=1e-1, err_u_Hdiv=2e-1, err_p_L2=3e-1)
    assert row.h == pytest.approx(math.sqrt(2.0) / 8)
    assert row.err_uhat_L2 is None
    with pytest.raises(ValidationError):
        ErrorRow(M=8, tau=1 / 64, err_c_L2=-1.0, err_u_L2=0.0, err_u_Hdiv=0.0, err_p_L2=0.0)
    with pytest.raises(ValidationError):
        ErrorRow(M=8, tau=1 / 64, err_c_L2=float("inf"), err_u_L2=0.0, err_u_Hdiv=0.0, err_p_L2=0.0)


def test_l2_error_is_a_norm_of_the_difference(mesh4):
    space = function_space(mesh4, "P1")
    a = interpolate_p1(mesh4, lambda x, y: np.sin(3.0 * x) * y)
    b = interpolate_p1(mesh4, lambda x, y: x * x - y)
    exact = lambda x, y, t: np.cos(x + 2.0 * y)
    zero = lambda x, y, t: 0.0 * x
    gap = l2_error_scalar(Field(space, a.coeffs - b.coeffs), zero, 0.0)
    assert l2_error_scalar(a, exact, 0.0) <= gap + l2_error_scalar(b, exact, 0.0) + 1e-15

    scaled = Field(space, -2.5 * a.coeffs)
    assert l2_error_scalar(scaled, lambda x, y, t: -2.5 * exact(x, y, t), 0.0) == pytest.approx(
        2.5 * l2_error_scalar(a, exact, 0.0), rel=1e-12
    )


def test_mean_normalized_error_shifts_by_domain_means(mesh4):
    c = interpolate_p1(mesh4, lambda x, y: x * y + 2.0)
    exact = lambda x, y, t: np.exp(x) + t
    shifted = Field(c.space, c.coeffs - mean_value(c))
    ref_mean = exact_mean(mesh4, exact, 1.0)
    expected = l2_error_scalar(shifted, lambda x, y, t: exact(x, y, t) - ref_mean, 1.0)
    assert l2_error_scalar(c, exact, 1.0, normalize_mean=True) == pytest.approx(expected, rel=1e-12)


def test_p1_interpolation_error_is_second_order():
    errs = []
    for M in (4, 8, 16):
        c = interpolate_p1(build_uniform_mesh(M), lambda x, y: np.sin(x * x))
        errs.append((math.sqrt(2.0) / M, l2_error_scalar(c, lambda x, y, t: np.sin(x * x), 0.0)))
    assert all(1.8 <= r <= 2.2 for r in convergence_order(errs))
