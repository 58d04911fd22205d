"""Discrete operators of one time step.

assemble_mixed           the Darcy saddle system (RT0/P0 or RT1/P1Disc)
assemble_concentration   the characteristic concentration system on P1

Boundary data are no-flux: u.n = 0 is imposed on the boundary RT dofs, the
concentration gets the natural Neumann condition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

import config
from miscible.errors import CoefficientOutOfBounds, KindMismatch
from miscible.linalg import SaddleSystem, SparseMatrix
from miscible.mesh import Mesh, clamp_to_domain, locate_points
from miscible.quadrature import QuadRule, triangle_rule
from miscible.spaces import (
    Field,
    SpaceKind,
    function_space,
    p1_gradients,
    rt_basis,
    scalar_basis,
    scalar_values,
    vector_values,
)

logger = logging.getLogger(__name__)

SpaceTimeFunction = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def zero_source(x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


def unit_permeability(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.ones_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CoefficientSet:
    """Physical data of the miscible displacement system (porosity = 1).

    g and f are optional manufactured forcings added to the concentration
    source c1*qI and to the divergence source qI - qP respectively.
    """

    mu: Callable[[np.ndarray], np.ndarray]
    D: Callable[[np.ndarray], np.ndarray]
    k: Callable[[np.ndarray, np.ndarray], np.ndarray] = unit_permeability
    qI: SpaceTimeFunction = zero_source
    qP: SpaceTimeFunction = zero_source
    c1: SpaceTimeFunction = zero_source
    g: SpaceTimeFunction | None = None
    f: SpaceTimeFunction | None = None
    k0: float | None = None
    mu0: float | None = None
    d_m: float = 0.0

    def divergence_source(self, x, y, t) -> np.ndarray:
        src = self.qI(x, y, t) - self.qP(x, y, t)
        if self.f is not None:
            src = src + self.f(x, y, t)
        return np.broadcast_to(src, np.shape(x))

    def concentration_source(self, x, y, t) -> np.ndarray:
        src = self.c1(x, y, t) * self.qI(x, y, t)
        if self.g is not None:
            src = src + self.g(x, y, t)
        return np.broadcast_to(src, np.shape(x))


@dataclass(frozen=True, eq=False)
class QuadData:
    """A triangle rule pushed to every element, flattened element-major."""

    rule: QuadRule
    elems: np.ndarray
    bary: np.ndarray
    points: np.ndarray
    dx: np.ndarray

    @property
    def nq(self) -> int:
        return len(self.rule)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    def per_element(self, values: np.ndarray) -> np.ndarray:
        return values.reshape((-1, self.nq) + values.shape[1:])


@lru_cache(maxsize=32)
def quadrature_data(mesh: Mesh, degree: int) -> QuadData:
    rule = triangle_rule(degree)
    nelem, nq = mesh.num_elements, len(rule)
    return QuadData(
        rule=rule,
        elems=np.repeat(np.arange(nelem), nq),
        bary=np.tile(rule.points, (nelem, 1)),
        points=mesh.physical_points(rule.points).reshape(-1, 2),
        dx=(2.0 * mesh.areas[:, None] * rule.weights[None, :]).ravel(),
    )


def _check_range(name: str, values: np.ndarray, bound: float | None) -> None:
    if not np.all(np.isfinite(values)) or values.min() <= 0.0:
        raise CoefficientOutOfBounds(f"{name} must be positive, got min {np.nanmin(values):.3e}")
    if bound is not None and (values.min() < 1.0 / bound or values.max() > bound):
        raise CoefficientOutOfBounds(
            f"{name} outside [{1.0 / bound:.3e}, {bound:.3e}]: range [{values.min():.3e}, {values.max():.3e}]"
        )


def _check_dispersion(D: np.ndarray, d_m: float) -> None:
    if not np.allclose(D, np.swapaxes(D, -1, -2), rtol=1e-12, atol=1e-14):
        raise CoefficientOutOfBounds("Dispersion tensor is not symmetric")
    smallest = np.linalg.eigvalsh(D).min()
    if smallest <= 0.0 or smallest < d_m:
        raise CoefficientOutOfBounds(f"Dispersion tensor eigenvalue {smallest:.3e} below d_m={d_m:.3e}")


# =====================================================
# MIXED DARCY SYSTEM
# =====================================================
def mixed_spaces(order: int) -> tuple[SpaceKind, SpaceKind]:
    if order == 0:
        return SpaceKind.RT0, SpaceKind.P0
    if order == 1:
        return SpaceKind.RT1, SpaceKind.P1DISC
    raise KindMismatch(f"Mixed order must be 0 or 1, got {order}")


def assemble_mixed(
    mesh: Mesh,
    coeffs: CoefficientSet,
    c_h: Field,
    t: float,
    order: int = 0,
    quad_degree: int | None = None,
) -> SaddleSystem:
    """(mu(c_h)/k u, v) - (p, div v) = 0 and (div u, q) = (qI - qP, q)."""
    if c_h.kind is not SpaceKind.P1:
        raise KindMismatch(f"Concentration must be P1, got {c_h.kind.value}")
    vkind, pkind = mixed_spaces(order)
    vspace, pspace = function_space(mesh, vkind), function_space(mesh, pkind)
    qd = quadrature_data(mesh, quad_degree or config.QUAD_ASSEMBLY)

    mu_q = np.asarray(coeffs.mu(scalar_values(c_h, qd.elems, qd.bary)), dtype=float)
    k_q = np.broadcast_to(np.asarray(coeffs.k(qd.x, qd.y), dtype=float), mu_q.shape)
    _check_range("mu", mu_q, coeffs.mu0)
    _check_range("k", k_q, coeffs.k0)

    vals, divs = rt_basis(vspace, qd.elems, qd.points)
    vals, divs = qd.per_element(vals), qd.per_element(divs)
    phi = qd.per_element(scalar_basis(pspace, qd.bary))
    dx = qd.per_element(qd.dx)
    weight = dx * qd.per_element(mu_q / k_q)

    src = np.asarray(coeffs.divergence_source(qd.x, qd.y, t), dtype=float)

    A = SparseMatrix((vspace.dof_count, vspace.dof_count), symmetric=True)
    A.add_local(vspace.cell_dofs, vspace.cell_dofs, np.einsum("tq,tqid,tqjd->tij", weight, vals, vals))
    B = SparseMatrix((pspace.dof_count, vspace.dof_count))
    B.add_local(pspace.cell_dofs, vspace.cell_dofs, np.einsum("tq,tqa,tqi->tai", dx, phi, divs))

    f_p = np.zeros(pspace.dof_count)
    np.add.at(f_p, pspace.cell_dofs, np.einsum("tq,tq,tqa->ta", dx, qd.per_element(src), phi))

    return SaddleSystem(
        A=A.finalize(),
        B=B.finalize(),
        f_u=np.zeros(vspace.dof_count),
        f_p=f_p,
        mean_constraint=pspace.mean_weights(),
        essential=vspace.essential_dofs,
        source_sup=float(np.abs(src).max(initial=0.0)),
    )


# =====================================================
# CHARACTERISTIC CONCENTRATION SYSTEM
# =====================================================
def characteristic_feet(mesh: Mesh, points: np.ndarray, velocity: np.ndarray, tau: float, clamp: bool = True):
    """Feet x - u(x) tau, located in the mesh. Returns (elems, bary)."""
    feet = points - tau * velocity
    if clamp:
        feet = clamp_to_domain(feet)
    return locate_points(mesh, feet)


def assemble_concentration(
    mesh: Mesh,
    coeffs: CoefficientSet,
    u_h: Field,
    c_old: Field,
    tau: float,
    t_next: float,
    quad_degree: int | None = None,
    clamp: bool | None = None,
):
    """Matrix (1/tau) M + A_D + M_qP and rhs of the characteristic step."""
    if tau <= 0.0:
        raise ValueError(f"Time step must be positive, got {tau}")
    if not u_h.kind.is_vector or c_old.kind is not SpaceKind.P1:
        raise KindMismatch(f"Expected RT velocity and P1 concentration, got {u_h.kind.value}/{c_old.kind.value}")
    clamp = (not config.DEBUG) if clamp is None else clamp
    qd = quadrature_data(mesh, quad_degree or config.QUAD_ASSEMBLY)
    cspace = c_old.space

    u_q, _ = vector_values(u_h, qd.elems, qd.points)
    D_q = np.asarray(coeffs.D(u_q), dtype=float)
    _check_dispersion(D_q, coeffs.d_m)

    dx = qd.per_element(qd.dx)
    phi = qd.per_element(qd.bary)
    grads = p1_gradients(mesh)
    qP = qd.per_element(np.broadcast_to(np.asarray(coeffs.qP(qd.x, qd.y, t_next), dtype=float), qd.dx.shape))

    mass = np.einsum("tq,tqi,tqj->tij", dx, phi, phi)
    stiffness = np.einsum("tq,tqde,tid,tje->tij", dx, qd.per_element(D_q), grads, grads)
    reaction = np.einsum("tq,tqi,tqj->tij", dx * qP, phi, phi)

    K = SparseMatrix((cspace.dof_count, cspace.dof_count), symmetric=True)
    K.add_local(cspace.cell_dofs, cspace.cell_dofs, mass / tau + stiffness + reaction)

    foot_elems, foot_bary = characteristic_feet(mesh, qd.points, u_q, tau, clamp=clamp)
    c_feet = scalar_values(c_old, foot_elems, foot_bary)
    src = np.asarray(coeffs.concentration_source(qd.x, qd.y, t_next), dtype=float)
    integrand = qd.per_element(c_feet / tau + src)

    rhs = np.zeros(cspace.dof_count)
    np.add.at(rhs, cspace.cell_dofs, np.einsum("tq,tq,tqi->ti", dx, integrand, phi))
    return K.finalize(), rhs
