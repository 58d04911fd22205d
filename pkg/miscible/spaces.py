"""Finite element spaces on a Mesh: P1, P0, RT0, RT1 and discontinuous P1.

Degrees of freedom
------------------
P1      nodal values, dof = node id
P0      element values, dof = element id
P1Disc  element-local nodal values, dof = 3*T + k
RT0     mean normal component over each edge (global edge normal)
RT1     per edge e: dofs 2e, 2e+1 = int_0^1 v.n ds and int_0^1 v.n s ds, with s
        the edge parameter running from the lower to the higher node id;
        per element T: dofs 2*num_edges + 2T + i = mean of v_i over T

Edge dofs are defined through the global orientation, so the normal trace is
single-valued across interior edges without per-element sign flips.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable

import numpy as np

import config
from miscible.errors import KindMismatch, PointNotInElement
from miscible.mesh import Mesh, barycentric
from miscible.quadrature import edge_rule, triangle_rule

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
VectorFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SpaceKind(str, Enum):
    P1 = "P1"
    P0 = "P0"
    RT0 = "RT0"
    RT1 = "RT1"
    P1DISC = "P1Disc"

    @property
    def is_vector(self) -> bool:
        return self in (SpaceKind.RT0, SpaceKind.RT1)


LOCAL_DOFS = {
    SpaceKind.P1: 3,
    SpaceKind.P0: 1,
    SpaceKind.RT0: 3,
    SpaceKind.RT1: 8,
    SpaceKind.P1DISC: 3,
}


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    mesh: Mesh
    kind: SpaceKind
    cell_dofs: np.ndarray
    dof_count: int
    # Inverse dual matrices of the RT1 prime basis, (nelem, 8, 8)
    rt1_coeffs: np.ndarray | None = None

    @property
    def essential_dofs(self) -> np.ndarray:
        """Dofs carrying the normal trace on the boundary (empty for scalars)."""
        b = self.mesh.boundary_edges
        if self.kind is SpaceKind.RT0:
            return b.copy()
        if self.kind is SpaceKind.RT1:
            return np.sort(np.concatenate([2 * b, 2 * b + 1]))
        return np.empty(0, dtype=np.int64)

    def mean_weights(self) -> np.ndarray:
        """w with w @ coeffs == integral of the field (scalar spaces only)."""
        mesh = self.mesh
        if self.kind is SpaceKind.P0:
            return mesh.areas.copy()
        if self.kind is SpaceKind.P1DISC:
            return np.repeat(mesh.areas / 3.0, 3)
        if self.kind is SpaceKind.P1:
            w = np.zeros(mesh.num_nodes)
            np.add.at(w, mesh.elements, np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1))
            return w
        raise KindMismatch(f"{self.kind.value} has no scalar mean")


@dataclass(frozen=True, eq=False)
class Field:
    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        if len(self.coeffs) != self.space.dof_count:
            raise KindMismatch(
                f"{self.space.kind.value} field needs {self.space.dof_count} coefficients, got {len(self.coeffs)}"
            )

    @property
    def kind(self) -> SpaceKind:
        return self.space.kind

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh


# =====================================================
# SPACE CONSTRUCTION
# =====================================================
@lru_cache(maxsize=64)
def function_space(mesh: Mesh, kind: SpaceKind | str) -> FunctionSpace:
    kind = SpaceKind(kind)
    nelem = mesh.num_elements
    if kind is SpaceKind.P1:
        return FunctionSpace(mesh, kind, mesh.elements, mesh.num_nodes)
    if kind is SpaceKind.P0:
        return FunctionSpace(mesh, kind, np.arange(nelem)[:, None], nelem)
    if kind is SpaceKind.P1DISC:
        return FunctionSpace(mesh, kind, np.arange(3 * nelem).reshape(nelem, 3), 3 * nelem)
    if kind is SpaceKind.RT0:
        return FunctionSpace(mesh, kind, mesh.elem_edges, mesh.num_edges)

    nedge = mesh.num_edges
    edge_part = np.stack([2 * mesh.elem_edges, 2 * mesh.elem_edges + 1], axis=2).reshape(nelem, 6)
    interior = 2 * nedge + np.stack([2 * np.arange(nelem), 2 * np.arange(nelem) + 1], axis=1)
    cell_dofs = np.concatenate([edge_part, interior], axis=1)
    return FunctionSpace(mesh, kind, cell_dofs, 2 * nedge + 2 * nelem, _rt1_dual_inverse(mesh))


# =====================================================
# RT1 LOCAL BASIS
# =====================================================
def _element_scale(mesh: Mesh, elems: np.ndarray):
    centroid = mesh.nodes[mesh.elements[elems]].mean(axis=-2)
    scale = np.sqrt(2.0 * mesh.areas[elems])
    return centroid, scale


def _rt1_primes(mesh: Mesh, elems: np.ndarray, points: np.ndarray):
    """Prime basis of P1^2 + x*P1~ in centroid-scaled coordinates.

    Returns values (n, 8, 2) and divergences (n, 8).
    """
    centroid, scale = _element_scale(mesh, elems)
    xi = (points[..., 0] - centroid[..., 0]) / scale
    eta = (points[..., 1] - centroid[..., 1]) / scale
    zero, one = np.zeros_like(xi), np.ones_like(xi)

    vals = np.stack(
        [
            np.stack([one, zero], axis=-1),
            np.stack([xi, zero], axis=-1),
            np.stack([eta, zero], axis=-1),
            np.stack([zero, one], axis=-1),
            np.stack([zero, xi], axis=-1),
            np.stack([zero, eta], axis=-1),
            np.stack([xi * xi, xi * eta], axis=-1),
            np.stack([xi * eta, eta * eta], axis=-1),
        ],
        axis=-2,
    )
    inv = 1.0 / scale
    divs = np.stack([zero, inv * one, zero, zero, zero, inv * one, 3.0 * xi * inv, 3.0 * eta * inv], axis=-1)
    return vals, divs


def _rt1_dual_inverse(mesh: Mesh) -> np.ndarray:
    nelem = mesh.num_elements
    elems = np.arange(nelem)
    dual = np.zeros((nelem, 8, 8))

    s, w = edge_rule(3)
    for k in range(3):
        edge = mesh.elem_edges[:, k]
        a = mesh.nodes[mesh.edges[edge, 0]]
        b = mesh.nodes[mesh.edges[edge, 1]]
        normal = mesh.edge_normals[edge]
        for sg, wg in zip(s, w):
            vals, _ = _rt1_primes(mesh, elems, a + sg * (b - a))
            flux = np.einsum("tjd,td->tj", vals, normal)
            dual[:, 2 * k, :] += wg * flux
            dual[:, 2 * k + 1, :] += wg * sg * flux

    rule = triangle_rule(4)
    xq = mesh.physical_points(rule.points)
    for q in range(len(rule)):
        vals, _ = _rt1_primes(mesh, elems, xq[:, q])
        dual[:, 6, :] += 2.0 * rule.weights[q] * vals[:, :, 0]
        dual[:, 7, :] += 2.0 * rule.weights[q] * vals[:, :, 1]

    return np.linalg.inv(dual)


# =====================================================
# BASIS TABULATION
# =====================================================
def scalar_basis(space: FunctionSpace, bary: np.ndarray) -> np.ndarray:
    """Local scalar basis values (..., nloc) at barycentric points."""
    if space.kind in (SpaceKind.P1, SpaceKind.P1DISC):
        return bary
    if space.kind is SpaceKind.P0:
        return np.ones(bary.shape[:-1] + (1,))
    raise KindMismatch(f"{space.kind.value} is not a scalar space")


def p1_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the barycentric basis, (nelem, 3, 2)."""
    g12 = mesh.inv_jacobians
    return np.concatenate([-(g12[:, 0] + g12[:, 1])[:, None, :], g12], axis=1)


def rt_basis(space: FunctionSpace, elems: np.ndarray, points: np.ndarray):
    """Local RT basis values (n, nloc, 2) and divergences (n, nloc) at physical points."""
    mesh = space.mesh
    if space.kind is SpaceKind.RT0:
        verts = mesh.nodes[mesh.elements[elems]]
        lengths = mesh.edge_lengths[mesh.elem_edges[elems]]
        scale = mesh.elem_signs[elems] * lengths / (2.0 * mesh.areas[elems, None])
        vals = scale[..., None] * (points[:, None, :] - verts)
        return vals, 2.0 * scale
    if space.kind is SpaceKind.RT1:
        pv, pd = _rt1_primes(mesh, elems, points)
        coeffs = space.rt1_coeffs[elems]
        return np.einsum("nkj,nkd->njd", coeffs, pv), np.einsum("nkj,nk->nj", coeffs, pd)
    raise KindMismatch(f"{space.kind.value} is not an H(div) space")


# =====================================================
# EVALUATION
# =====================================================
def scalar_values(field: Field, elems: np.ndarray, bary: np.ndarray) -> np.ndarray:
    phi = scalar_basis(field.space, bary)
    return np.einsum("nk,nk->n", phi, field.coeffs[field.space.cell_dofs[elems]])


def vector_values(field: Field, elems: np.ndarray, points: np.ndarray):
    """Values (n, 2) and divergences (n,) of an RT field."""
    vals, divs = rt_basis(field.space, elems, points)
    c = field.coeffs[field.space.cell_dofs[elems]]
    return np.einsum("nk,nkd->nd", c, vals), np.einsum("nk,nk->n", c, divs)


def eval_scalar(field: Field, elem: int, bary) -> float:
    if field.kind.is_vector:
        raise KindMismatch(f"eval_scalar on a {field.kind.value} field")
    return float(scalar_values(field, np.array([elem]), np.asarray(bary, dtype=float)[None, :])[0])


def _check_in_element(mesh: Mesh, elem: int, point: np.ndarray) -> None:
    lam = barycentric(mesh, np.array([elem]), point[None, :])[0]
    if lam.min() < -config.GEOM_EPS:
        raise PointNotInElement(elem, point)


def eval_rt(field: Field, elem: int, point) -> np.ndarray:
    if not field.kind.is_vector:
        raise KindMismatch(f"eval_rt on a {field.kind.value} field")
    point = np.asarray(point, dtype=float)
    _check_in_element(field.mesh, elem, point)
    vals, _ = vector_values(field, np.array([elem]), point[None, :])
    return vals[0]


def div_rt(field: Field, elem: int, point) -> float:
    if not field.kind.is_vector:
        raise KindMismatch(f"div_rt on a {field.kind.value} field")
    point = np.asarray(point, dtype=float)
    _check_in_element(field.mesh, elem, point)
    _, divs = vector_values(field, np.array([elem]), point[None, :])
    return float(divs[0])


# =====================================================
# INTERPOLATION
# =====================================================
def interpolate_p1(mesh: Mesh, f: ScalarFunction) -> Field:
    """Lagrange interpolant: coefficients are the nodal values."""
    values = np.broadcast_to(np.asarray(f(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float), (mesh.num_nodes,))
    return Field(function_space(mesh, SpaceKind.P1), values.copy())


def edge_moments(mesh: Mesh, v: VectorFunction, npoints: int = 4):
    """int_0^1 v.n ds and int_0^1 v.n s ds on every edge, with the global normal."""
    s, w = edge_rule(npoints)
    a = mesh.nodes[mesh.edges[:, 0]]
    b = mesh.nodes[mesh.edges[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(v(pts[..., 0].ravel(), pts[..., 1].ravel())).reshape(mesh.num_edges, len(s), 2)
    flux = np.einsum("egd,ed->eg", vals, mesh.edge_normals)
    return flux @ w, flux @ (w * s)


def interpolate_rt(mesh: Mesh, kind: SpaceKind | str, v: VectorFunction) -> Field:
    kind = SpaceKind(kind)
    if not kind.is_vector:
        raise KindMismatch(f"interpolate_rt into {kind.value}")
    space = function_space(mesh, kind)
    m0, m1 = edge_moments(mesh, v)
    if kind is SpaceKind.RT0:
        return Field(space, m0)

    rule = triangle_rule(5)
    xq = mesh.physical_points(rule.points)
    vals = np.asarray(v(xq[..., 0].ravel(), xq[..., 1].ravel())).reshape(mesh.num_elements, len(rule), 2)
    means = 2.0 * np.einsum("q,tqd->td", rule.weights, vals)

    coeffs = np.empty(space.dof_count)
    coeffs[0 : 2 * mesh.num_edges : 2] = m0
    coeffs[1 : 2 * mesh.num_edges : 2] = m1
    coeffs[2 * mesh.num_edges :] = means.ravel()
    return Field(space, coeffs)
