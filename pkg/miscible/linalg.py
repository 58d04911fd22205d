"""Sparse matrices and the two solves of a time step.

solve_spd        Jacobi-preconditioned CG for the concentration system
solve_saddle     direct factorisation of the mixed Darcy KKT system with a
                 scalar multiplier enforcing a zero-mean pressure
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import config
from miscible.errors import NotConverged, SingularSystem

logger = logging.getLogger(__name__)


class SparseMatrix:
    """Triplet accumulator finalised into CSR (duplicates summed, rows sorted)."""

    def __init__(self, shape: tuple[int, int], symmetric: bool = False):
        self.shape = shape
        self.symmetric = symmetric
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._csr: sp.csr_matrix | None = None

    def add(self, rows, cols, vals) -> None:
        if self._csr is not None:
            raise RuntimeError("SparseMatrix already finalized")
        self._rows.append(np.asarray(rows, dtype=np.int64).ravel())
        self._cols.append(np.asarray(cols, dtype=np.int64).ravel())
        self._vals.append(np.asarray(vals, dtype=float).ravel())

    def add_local(self, row_dofs: np.ndarray, col_dofs: np.ndarray, local: np.ndarray) -> None:
        """Scatter element matrices local[T, i, j] to (row_dofs[T, i], col_dofs[T, j])."""
        nr, nc = row_dofs.shape[1], col_dofs.shape[1]
        rows = np.broadcast_to(row_dofs[:, :, None], (len(local), nr, nc))
        cols = np.broadcast_to(col_dofs[:, None, :], (len(local), nr, nc))
        self.add(rows, cols, local)

    def finalize(self) -> sp.csr_matrix:
        if self._csr is None:
            if self._rows:
                rows, cols, vals = (np.concatenate(x) for x in (self._rows, self._cols, self._vals))
            else:
                rows = cols = np.empty(0, dtype=np.int64)
                vals = np.empty(0)
            csr = sp.coo_matrix((vals, (rows, cols)), shape=self.shape).tocsr()
            csr.sum_duplicates()
            csr.sort_indices()
            if self.symmetric and not is_symmetric(csr):
                raise RuntimeError("SparseMatrix declared symmetric but assembled entries are not")
            self._csr = csr
        return self._csr


def is_symmetric(A: sp.spmatrix, rtol: float = 1e-12) -> bool:
    A = sp.csr_matrix(A)
    scale = max(abs(A).max(), 1.0) if A.nnz else 1.0
    diff = A - A.T
    return (abs(diff).max() if diff.nnz else 0.0) <= rtol * scale


def solve_spd(A, b: np.ndarray, tol: float | None = None, history: list | None = None, maxiter: int | None = None) -> np.ndarray:
    """CG with diagonal preconditioning; ||Ax - b|| <= tol ||b|| on return."""
    tol = config.CG_TOL if tol is None else tol
    maxiter = config.CG_MAXITER if maxiter is None else maxiter
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)

    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise NotConverged(0, np.inf, "Matrix has a non-positive diagonal entry, not SPD")
    precond = sp.diags(1.0 / diag)

    iterations = 0

    def monitor(xk):
        nonlocal iterations
        iterations += 1
        if history is not None:
            history.append(float(np.linalg.norm(b - A @ xk) / bnorm))

    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=precond, callback=monitor)
    residual = float(np.linalg.norm(b - A @ x) / bnorm)
    if info != 0 or not np.isfinite(residual):
        raise NotConverged(iterations, residual)
    logger.debug(f"CG converged in {iterations} iterations, relative residual {residual:.2e}")
    return x


@dataclass
class SaddleSystem:
    """[[A, B^T], [B, 0]] with A (nu x nu), B (np x nu).

    Velocity dofs listed in `essential` are fixed to zero (no-flux trace).
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    f_u: np.ndarray
    f_p: np.ndarray
    mean_constraint: np.ndarray
    essential: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    source_sup: float = 0.0

    @property
    def num_velocity(self) -> int:
        return self.A.shape[0]

    @property
    def num_pressure(self) -> int:
        return self.B.shape[0]

    def free_velocity_dofs(self) -> np.ndarray:
        mask = np.ones(self.num_velocity, dtype=bool)
        mask[self.essential] = False
        return np.flatnonzero(mask)


@dataclass
class SaddleSolution:
    u: np.ndarray
    p: np.ndarray
    multiplier: float
    residual: float


def kkt_matrix(system: SaddleSystem) -> tuple[sp.csc_matrix, np.ndarray, np.ndarray]:
    """Symmetric KKT matrix on the unknowns (u_free, -p, lambda) and its rhs."""
    free = system.free_velocity_dofs()
    A = system.A[free][:, free]
    B = system.B[:, free]
    m = sp.csr_matrix(system.mean_constraint.reshape(-1, 1))
    K = sp.bmat(
        [
            [A, B.T, None],
            [B, None, m],
            [None, m.T, None],
        ],
        format="csc",
    )
    rhs = np.concatenate([system.f_u[free], system.f_p, [0.0]])
    return K, rhs, free


def solve_saddle(system: SaddleSystem, tol: float | None = None) -> SaddleSolution:
    """Returns u, p with A u - B^T p = f_u, B u + m lambda = f_p, m.p = 0."""
    tol = config.SADDLE_TOL if tol is None else tol
    K, rhs, free = kkt_matrix(system)
    try:
        lu = spla.splu(K)
    except RuntimeError as e:
        raise SingularSystem(f"KKT factorization failed: {e}") from e

    y = lu.solve(rhs)
    if not np.all(np.isfinite(y)):
        raise SingularSystem("KKT solve produced non-finite values")

    nfree, npres = len(free), system.num_pressure
    u = np.zeros(system.num_velocity)
    u[free] = y[:nfree]
    p = -y[nfree : nfree + npres]
    lam = float(y[-1])

    r_u = system.A @ u - system.B.T @ p - system.f_u
    r_p = system.B @ u + system.mean_constraint * lam - system.f_p
    residual = float(max(np.abs(r_u[free]).max(initial=0.0), np.abs(r_p).max(initial=0.0)))
    if residual > tol * (1.0 + np.abs(rhs).max(initial=0.0)):
        raise NotConverged(1, residual, f"KKT residual {residual:.3e} above tolerance")
    return SaddleSolution(u=u, p=p, multiplier=lam, residual=residual)


def divergence_defect(system: SaddleSystem, solution: SaddleSolution) -> np.ndarray:
    """Per pressure dof |(div u_h, q) - (f, q) + lambda (1, q)|.

    The multiplier absorbs the quadrature-level incompatibility of the data,
    so this is the defect against the right-hand side actually solved.
    """
    return np.abs(system.B @ solution.u + system.mean_constraint * solution.multiplier - system.f_p)
