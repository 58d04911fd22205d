"""Uniform triangulations of the unit square with oriented-edge topology.

Local edge k of an element is the edge opposite its vertex k, i.e. the segment
(v[k+1], v[k+2]).  Every global edge is oriented from its lower node id to its
higher one; its unit normal is the tangent rotated clockwise.  elem_signs[T, k]
is +1 when that global normal points out of T and -1 otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import config
from miscible.errors import PointOutsideDomain

logger = logging.getLogger(__name__)

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class GridLocator:
    """Uniform background grid over [0,1]^2.

    candidates[cell] lists (ascending, padded with -1) every element whose
    bounding box, widened by the geometric tolerance, touches the closed cell.
    """

    cells_per_side: int
    candidates: np.ndarray

    @classmethod
    def build(cls, nodes: np.ndarray, elements: np.ndarray, cells_per_side: int, eps: float) -> GridLocator:
        n = cells_per_side
        buckets: list[list[int]] = [[] for _ in range(n * n)]
        corners = nodes[elements]
        lo = np.clip(np.floor((corners.min(axis=1) - eps) * n).astype(int), 0, n - 1)
        hi = np.clip(np.floor((corners.max(axis=1) + eps) * n).astype(int), 0, n - 1)
        for elem in range(len(elements)):
            for iy in range(lo[elem, 1], hi[elem, 1] + 1):
                for ix in range(lo[elem, 0], hi[elem, 0] + 1):
                    buckets[iy * n + ix].append(elem)

        width = max(len(b) for b in buckets)
        candidates = np.full((n * n, width), -1, dtype=np.int64)
        for cell, bucket in enumerate(buckets):
            candidates[cell, : len(bucket)] = sorted(bucket)
        return cls(cells_per_side=n, candidates=candidates)

    def cells_of(self, points: np.ndarray) -> np.ndarray:
        n = self.cells_per_side
        idx = np.clip(np.floor(points * n).astype(np.int64), 0, n - 1)
        return idx[:, 1] * n + idx[:, 0]


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    edges: np.ndarray
    elem_edges: np.ndarray
    elem_signs: np.ndarray
    boundary_edges: np.ndarray
    locator: GridLocator
    h: float
    # Derived geometry, filled by from_triangles
    areas: np.ndarray = field(repr=False)
    jacobians: np.ndarray = field(repr=False)
    inv_jacobians: np.ndarray = field(repr=False)
    edge_lengths: np.ndarray = field(repr=False)
    edge_normals: np.ndarray = field(repr=False)

    @classmethod
    def from_triangles(cls, nodes: np.ndarray, elements: np.ndarray, cells_per_side: int, eps: float | None = None) -> Mesh:
        eps = config.GEOM_EPS if eps is None else eps
        nodes = np.asarray(nodes, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        nelem = len(elements)

        local = elements[:, LOCAL_EDGES]
        pairs = np.sort(local, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        elem_edges = inverse.reshape(nelem, 3)
        elem_signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)

        incidence = np.bincount(elem_edges.ravel(), minlength=len(edges))
        boundary_edges = np.flatnonzero(incidence == 1)

        v = nodes[elements]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        det = np.linalg.det(jac)

        tangent = nodes[edges[:, 1]] - nodes[edges[:, 0]]
        lengths = np.linalg.norm(tangent, axis=1)
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]

        mesh = cls(
            nodes=nodes,
            elements=elements,
            edges=edges,
            elem_edges=elem_edges,
            elem_signs=elem_signs,
            boundary_edges=boundary_edges,
            locator=GridLocator.build(nodes, elements, cells_per_side, eps),
            h=float(lengths.max()),
            areas=det / 2.0,
            jacobians=jac,
            inv_jacobians=np.linalg.inv(jac),
            edge_lengths=lengths,
            edge_normals=normals,
        )
        for arr in (mesh.nodes, mesh.elements, mesh.edges, mesh.elem_edges, mesh.elem_signs, mesh.areas):
            arr.flags.writeable = False
        return mesh

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_edges, dtype=bool)
        mask[self.boundary_edges] = True
        return mask

    def physical_points(self, bary: np.ndarray) -> np.ndarray:
        """Map barycentric points (nq, 3) to (nelem, nq, 2) physical points."""
        return np.einsum("qk,tkd->tqd", bary, self.nodes[self.elements])


def build_uniform_mesh(M: int) -> Mesh:
    """M x M squares, each cut along its lower-left to upper-right diagonal."""
    grid_i, grid_j = np.meshgrid(np.arange(M + 1), np.arange(M + 1))
    nodes = np.column_stack([grid_i.ravel() / M, grid_j.ravel() / M])

    sq_i, sq_j = np.meshgrid(np.arange(M), np.arange(M))
    a = (sq_j * (M + 1) + sq_i).ravel()
    b, c, d = a + 1, a + M + 2, a + M + 1

    elements = np.empty((2 * M * M, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([a, b, c])
    elements[1::2] = np.column_stack([a, c, d])

    mesh = Mesh.from_triangles(nodes, elements, cells_per_side=M)
    logger.debug(f"Uniform mesh M={M}: {mesh.num_nodes} nodes, {mesh.num_elements} elements, {mesh.num_edges} edges")
    return mesh


def clamp_to_domain(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def barycentric(mesh: Mesh, elems: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points[i] with respect to element elems[i]."""
    v0 = mesh.nodes[mesh.elements[elems, 0]]
    lam12 = np.einsum("...ij,...j->...i", mesh.inv_jacobians[elems], points - v0)
    return np.concatenate([1.0 - lam12.sum(axis=-1, keepdims=True), lam12], axis=-1)


def locate_points(mesh: Mesh, points: np.ndarray, eps: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised point location.

    Returns (elems, bary) with the lowest-numbered element containing each
    point (up to eps) and the barycentric coordinates in it.
    """
    eps = config.GEOM_EPS if eps is None else eps
    points = np.atleast_2d(np.asarray(points, dtype=float))

    outside = np.any((points < -eps) | (points > 1.0 + eps), axis=1)
    if outside.any():
        raise PointOutsideDomain(points[np.argmax(outside)])

    cand = mesh.locator.candidates[mesh.locator.cells_of(points)]
    valid = cand >= 0
    safe = np.where(valid, cand, 0)
    lam = barycentric(mesh, safe, points[:, None, :])
    inside = valid & (lam.min(axis=2) >= -eps)

    first = np.argmax(inside, axis=1)
    rows = np.arange(len(points))
    if not inside[rows, first].all():
        # Only reachable through a broken locator grid
        raise PointOutsideDomain(points[np.argmin(inside[rows, first])])
    return cand[rows, first], lam[rows, first]


def locate_point(mesh: Mesh, x) -> tuple[int, np.ndarray]:
    elems, bary = locate_points(mesh, np.asarray(x, dtype=float)[None, :])
    return int(elems[0]), bary[0]


def dump_mesh(mesh: Mesh, path: str | Path) -> None:
    """Debug dump: node table (id, x, y) then element table (id, n0, n1, n2)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"nodes {mesh.num_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            f.write(f"{i} {x:.17g} {y:.17g}\n")
        f.write(f"elements {mesh.num_elements}\n")
        for i, (n0, n1, n2) in enumerate(mesh.elements):
            f.write(f"{i} {n0} {n1} {n2}\n")
    logger.info(f"✅ Mesh written to {path}")
