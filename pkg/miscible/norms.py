"""Discretization errors against exact fields and observed convergence orders."""
from __future__ import annotations

import logging
import math
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, field_validator

import config
from miscible.assembly import quadrature_data
from miscible.errors import KindMismatch, NonPositiveError
from miscible.mesh import Mesh
from miscible.spaces import Field, scalar_values, vector_values

logger = logging.getLogger(__name__)


def _mean(values: np.ndarray, dx: np.ndarray) -> float:
    return float(dx @ values / dx.sum())


def mean_value(field: Field, quad_degree: int | None = None) -> float:
    """Domain mean of a scalar field."""
    qd = quadrature_data(field.mesh, quad_degree or config.QUAD_NORM)
    return _mean(scalar_values(field, qd.elems, qd.bary), qd.dx)


def exact_mean(mesh: Mesh, exact: Callable, t: float, quad_degree: int | None = None) -> float:
    qd = quadrature_data(mesh, quad_degree or config.QUAD_NORM)
    return _mean(np.broadcast_to(exact(qd.x, qd.y, t), qd.dx.shape), qd.dx)


def l2_error_scalar(
    field: Field,
    exact: Callable,
    t: float,
    quad_degree: int | None = None,
    normalize_mean: bool = False,
) -> float:
    """||field - exact(., t)||_L2; with normalize_mean both sides are shifted to zero mean."""
    if field.kind.is_vector:
        raise KindMismatch(f"l2_error_scalar on a {field.kind.value} field")
    qd = quadrature_data(field.mesh, quad_degree or config.QUAD_NORM)
    approx = scalar_values(field, qd.elems, qd.bary)
    ref = np.broadcast_to(np.asarray(exact(qd.x, qd.y, t), dtype=float), approx.shape)
    if normalize_mean:
        approx = approx - mean_value(field, quad_degree)
        ref = ref - exact_mean(field.mesh, exact, t, quad_degree)
    return math.sqrt(float(qd.dx @ (approx - ref) ** 2))


def _vector_errors(field: Field, exact_u: Callable, exact_divu: Callable | None, t: float, quad_degree: int | None):
    if not field.kind.is_vector:
        raise KindMismatch(f"Vector error of a {field.kind.value} field")
    qd = quadrature_data(field.mesh, quad_degree or config.QUAD_NORM)
    vals, divs = vector_values(field, qd.elems, qd.points)
    err_u = math.sqrt(float(qd.dx @ np.sum((vals - exact_u(qd.x, qd.y, t)) ** 2, axis=1)))
    if exact_divu is None:
        return err_u, None
    ref_div = np.broadcast_to(np.asarray(exact_divu(qd.x, qd.y, t), dtype=float), divs.shape)
    return err_u, math.sqrt(float(qd.dx @ (divs - ref_div) ** 2))


def l2_error_vector(field: Field, exact_u: Callable, t: float, quad_degree: int | None = None) -> float:
    return _vector_errors(field, exact_u, None, t, quad_degree)[0]


def hdiv_error(field: Field, exact_u: Callable, exact_divu: Callable, t: float, quad_degree: int | None = None) -> float:
    err_u, err_div = _vector_errors(field, exact_u, exact_divu, t, quad_degree)
    return math.sqrt(err_u**2 + err_div**2)


# =====================================================
# ORDERS
# =====================================================
def _validated(errs) -> tuple[np.ndarray, np.ndarray]:
    errs = list(errs)
    if len(errs) < 2:
        raise ValueError("Need at least two (h, error) rows to compute an order")
    h = np.array([float(r[0]) for r in errs])
    e = np.array([float(r[1]) for r in errs])
    if np.any(e <= 0.0) or not np.all(np.isfinite(e)):
        raise NonPositiveError(f"Errors must be positive and finite, got {e.tolist()}")
    if np.any(np.diff(h) >= 0.0):
        raise ValueError(f"Mesh sizes must decrease strictly, got {h.tolist()}")
    return h, e


def convergence_order(errs) -> list[float]:
    """Pairwise orders log(e_i / e_i+1) / log(h_i / h_i+1); log2 of the ratio when h halves."""
    h, e = _validated(errs)
    return [float(np.log(e[i] / e[i + 1]) / np.log(h[i] / h[i + 1])) for i in range(len(e) - 1)]


def least_squares_order(errs) -> float:
    h, e = _validated(errs)
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


# =====================================================
# ERROR ROWS
# =====================================================
class ErrorRow(BaseModel):
    M: int
    tau: float
    err_c_L2: float
    err_u_L2: float
    err_u_Hdiv: float
    err_p_L2: float
    err_uhat_L2: Optional[float] = None
    err_phat_L2: Optional[float] = None
    wall_time_seconds: float = 0.0

    @field_validator(
        "err_c_L2", "err_u_L2", "err_u_Hdiv", "err_p_L2", "err_uhat_L2", "err_phat_L2", "wall_time_seconds"
    )
    @classmethod
    def nonnegative_finite(cls, v):
        if v is not None and (not math.isfinite(v) or v < 0.0):
            raise ValueError(f"error entries must be nonnegative and finite, got {v}")
        return v

    @property
    def h(self) -> float:
        return math.sqrt(2.0) / self.M


ERROR_COLUMNS = ("err_c_L2", "err_u_L2", "err_u_Hdiv", "err_p_L2", "err_uhat_L2", "err_phat_L2")
