"""Manufactured problems for the miscible displacement system.

Every problem is written in the form

    c_t - div(D(u) grad c) + u . grad c = g,   u = -(k / mu(c)) grad p,   div u = f

on the unit square with k = 1, and every exact solution satisfies
u.n = 0 and (D grad c).n = 0 on the boundary.  Forcings are derived by hand
from derivative bundles; verify_problem is the arbiter of their correctness.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from miscible.assembly import CoefficientSet
from miscible.errors import ConfigError, ProblemInconsistent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Derivs:
    """Value and derivatives of a scalar field at sample points."""

    v: np.ndarray
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xx: np.ndarray
    xy: np.ndarray
    yy: np.ndarray


@dataclass(frozen=True)
class ManufacturedProblem:
    name: str
    exact_c: Callable
    exact_p: Callable
    exact_u: Callable
    forcing_f: Callable
    forcing_g: Callable
    coeffs: CoefficientSet
    description: str = ""

    def exact_divu(self, x, y, t):
        return self.forcing_f(x, y, t)


def dispersion(alpha: float, beta: float = 0.0, gamma: float = 0.0):
    """D(u) = (alpha + beta |u|^2) I + gamma u (x) u."""

    def D(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        speed2 = np.einsum("...d,...d->...", u, u)
        eye = np.broadcast_to(np.eye(2), u.shape[:-1] + (2, 2))
        return (alpha + beta * speed2)[..., None, None] * eye + gamma * np.einsum("...i,...j->...ij", u, u)

    return D


def _constant_derivs(value: float):
    def derivs(x, y, t):
        x = np.asarray(x, dtype=float)
        z = np.zeros_like(x + y)
        return Derivs(z + value, z, z, z, z, z, z)

    return derivs


def _build(
    name: str,
    c_derivs: Callable[..., Derivs],
    p_derivs: Callable[..., Derivs],
    mu: Callable,
    dmu: Callable,
    alpha: float,
    beta: float,
    gamma: float,
    description: str,
    mu0: float | None = None,
    d_m: float = 0.0,
) -> ManufacturedProblem:
    """Closed-form u, f and g from the derivative bundles of c and p."""

    def velocity_and_gradient(x, y, t):
        c, p = c_derivs(x, y, t), p_derivs(x, y, t)
        mob = 1.0 / mu(c.v)
        dmob = -dmu(c.v) * mob * mob
        u = np.stack([-mob * p.x, -mob * p.y], axis=-1)
        # du[..., i, j] = d u_i / d x_j
        du = -np.stack(
            [
                np.stack([p.xx * mob + p.x * dmob * c.x, p.xy * mob + p.x * dmob * c.y], axis=-1),
                np.stack([p.xy * mob + p.y * dmob * c.x, p.yy * mob + p.y * dmob * c.y], axis=-1),
            ],
            axis=-2,
        )
        return c, u, du

    def exact_u(x, y, t):
        return velocity_and_gradient(x, y, t)[1]

    def forcing_f(x, y, t):
        _, _, du = velocity_and_gradient(x, y, t)
        return du[..., 0, 0] + du[..., 1, 1]

    def forcing_g(x, y, t):
        c, u, du = velocity_and_gradient(x, y, t)
        grad_c = np.stack([c.x, c.y], axis=-1)
        hess_c = np.stack([np.stack([c.xx, c.xy], axis=-1), np.stack([c.xy, c.yy], axis=-1)], axis=-2)
        speed2 = np.einsum("...d,...d->...", u, u)
        u_dot_grad = np.einsum("...d,...d->...", u, grad_c)
        div_u = du[..., 0, 0] + du[..., 1, 1]

        grad_speed2 = 2.0 * np.einsum("...i,...ij->...j", u, du)
        grad_u_dot_grad = np.einsum("...ij,...i->...j", du, grad_c) + np.einsum("...i,...ij->...j", u, hess_c)

        div_flux = (
            (alpha + beta * speed2) * (c.xx + c.yy)
            + beta * np.einsum("...d,...d->...", grad_speed2, grad_c)
            + gamma * (div_u * u_dot_grad + np.einsum("...d,...d->...", u, grad_u_dot_grad))
        )
        return c.t - div_flux + u_dot_grad

    coeffs = CoefficientSet(
        mu=mu,
        D=dispersion(alpha, beta, gamma),
        g=forcing_g,
        f=forcing_f,
        mu0=mu0,
        d_m=d_m,
    )
    return ManufacturedProblem(
        name=name,
        exact_c=lambda x, y, t: c_derivs(x, y, t).v,
        exact_p=lambda x, y, t: p_derivs(x, y, t).v,
        exact_u=exact_u,
        forcing_f=forcing_f,
        forcing_g=forcing_g,
        coeffs=coeffs,
        description=description,
    )


# =====================================================
# REGISTERED PROBLEMS
# =====================================================
def problem_smooth2d() -> ManufacturedProblem:
    """c = 1 + 20 e^t (1+t^2) S(x) S(y),  S(x) = sin(x^2)(1-x)^2
    p = 3 + 400 e^t (1+t^3) R(x) R(y),    R(x) = x^2 (1-x)^3
    mu(c) = 1 + c^2,  D(u) = (1+|u|^2)/40 I

    The mobility k/mu is 1/(1+c^2).  Under this reading tau = 1/M^2 runs give
    first order in (u, p) and second order in c.
    """

    def S(x):
        a, da, dda = np.sin(x * x), 2.0 * x * np.cos(x * x), 2.0 * np.cos(x * x) - 4.0 * x * x * np.sin(x * x)
        b, db, ddb = (1.0 - x) ** 2, -2.0 * (1.0 - x), 2.0
        return a * b, da * b + a * db, dda * b + 2.0 * da * db + a * ddb

    def R(x):
        return (
            x**2 * (1.0 - x) ** 3,
            2.0 * x * (1.0 - x) ** 3 - 3.0 * x**2 * (1.0 - x) ** 2,
            2.0 * (1.0 - x) ** 3 - 12.0 * x * (1.0 - x) ** 2 + 6.0 * x**2 * (1.0 - x),
        )

    def c_derivs(x, y, t):
        amp = 20.0 * np.exp(t) * (1.0 + t * t)
        damp = 20.0 * np.exp(t) * (1.0 + 2.0 * t + t * t)
        (sx, dsx, ddsx), (sy, dsy, ddsy) = S(np.asarray(x, dtype=float)), S(np.asarray(y, dtype=float))
        return Derivs(
            1.0 + amp * sx * sy, damp * sx * sy, amp * dsx * sy, amp * sx * dsy,
            amp * ddsx * sy, amp * dsx * dsy, amp * sx * ddsy,
        )

    def p_derivs(x, y, t):
        amp = 400.0 * np.exp(t) * (1.0 + t**3)
        damp = 400.0 * np.exp(t) * (1.0 + 3.0 * t * t + t**3)
        (rx, drx, ddrx), (ry, dry, ddry) = R(np.asarray(x, dtype=float)), R(np.asarray(y, dtype=float))
        return Derivs(
            3.0 + amp * rx * ry, damp * rx * ry, amp * drx * ry, amp * rx * dry,
            amp * ddrx * ry, amp * drx * dry, amp * rx * ddry,
        )

    return _build(
        "paper2d",
        c_derivs,
        p_derivs,
        mu=lambda c: 1.0 + c * c,
        dmu=lambda c: 2.0 * c,
        alpha=1.0 / 40.0,
        beta=1.0 / 40.0,
        gamma=0.0,
        description="Smooth 2D manufactured solution, mu = 1+c^2, D = (1+|u|^2)/40",
        mu0=10.0,
        d_m=0.02,
    )


def problem_constant(value: float = 1.0) -> ManufacturedProblem:
    """c = value, p = 0, u = 0 with the paper2d coefficients."""
    return _build(
        "constant",
        _constant_derivs(value),
        _constant_derivs(0.0),
        mu=lambda c: 1.0 + c * c,
        dmu=lambda c: 2.0 * c,
        alpha=1.0 / 40.0,
        beta=1.0 / 40.0,
        gamma=0.0,
        description=f"Constant state c = {value}",
        mu0=10.0,
        d_m=0.02,
    )


def problem_linear_darcy() -> ManufacturedProblem:
    """mu = k = 1, p = cos(pi x) cos(pi y), c = 1 (decoupled)."""
    pi = np.pi

    def p_derivs(x, y, t):
        cx, cy = np.cos(pi * np.asarray(x, dtype=float)), np.cos(pi * np.asarray(y, dtype=float))
        sx, sy = np.sin(pi * np.asarray(x, dtype=float)), np.sin(pi * np.asarray(y, dtype=float))
        return Derivs(
            cx * cy, np.zeros_like(cx * cy), -pi * sx * cy, -pi * cx * sy,
            -pi * pi * cx * cy, pi * pi * sx * sy, -pi * pi * cx * cy,
        )

    return _build(
        "linear_darcy",
        _constant_derivs(1.0),
        p_derivs,
        mu=lambda c: np.ones_like(c),
        dmu=lambda c: np.zeros_like(c),
        alpha=1.0 / 40.0,
        beta=0.0,
        gamma=0.0,
        description="Darcy-only check: mu = 1, p = cos(pi x) cos(pi y)",
        mu0=2.0,
        d_m=0.02,
    )


def problem_tensor2d() -> ManufacturedProblem:
    """Full-tensor smoke problem.

    D(u) = I + u (x) u, mu(c) = 1 + c^2,
    c = 1 + e^{-t} cos(pi x) cos(pi y) / 10, p = e^{-t} cos(pi x) cos(pi y)
    """
    pi = np.pi

    def trig(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        cx, cy, sx, sy = np.cos(pi * x), np.cos(pi * y), np.sin(pi * x), np.sin(pi * y)
        return Derivs(
            cx * cy, np.zeros_like(cx * cy), -pi * sx * cy, -pi * cx * sy,
            -pi * pi * cx * cy, pi * pi * sx * sy, -pi * pi * cx * cy,
        )

    def scaled(x, y, t, amp: float, offset: float) -> Derivs:
        d, e = trig(x, y), amp * np.exp(-t)
        return Derivs(offset + e * d.v, -e * d.v, e * d.x, e * d.y, e * d.xx, e * d.xy, e * d.yy)

    return _build(
        "tensor2d",
        lambda x, y, t: scaled(x, y, t, 0.1, 1.0),
        lambda x, y, t: scaled(x, y, t, 1.0, 0.0),
        mu=lambda c: 1.0 + c * c,
        dmu=lambda c: 2.0 * c,
        alpha=1.0,
        beta=0.0,
        gamma=1.0,
        description="Full dispersion tensor D = I + u u^T, mu = 1 + c^2",
        mu0=10.0,
        d_m=0.5,
    )


PROBLEMS: dict[str, Callable[[], ManufacturedProblem]] = {
    "paper2d": problem_smooth2d,
    "constant": problem_constant,
    "linear_darcy": problem_linear_darcy,
    "tensor2d": problem_tensor2d,
}


def get_problem(name: str) -> ManufacturedProblem:
    if name not in PROBLEMS:
        raise ConfigError(f"Unknown problem '{name}', expected one of {sorted(PROBLEMS)}")
    return PROBLEMS[name]()


# =====================================================
# PDE-RESIDUAL ORACLE
# =====================================================
ORACLE_TIMES = (0.0, 0.37, 1.0)


def _central(fun, x, y, t, h: float, axis: int):
    """Fourth-order central difference of fun(x, y, t) along x, y or t."""
    shift = np.zeros(3)
    shift[axis] = h

    def at(k):
        return fun(x + k * shift[0], y + k * shift[1], t + k * shift[2])

    return (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h)


@dataclass
class ResidualReport:
    problem: str
    samples: int
    concentration: float
    divergence: float
    darcy: float
    boundary_flux: float

    CONCENTRATION_TOL = 1e-5
    DIVERGENCE_TOL = 1e-6
    DARCY_TOL = 1e-6
    BOUNDARY_TOL = 1e-12

    @property
    def passed(self) -> bool:
        return (
            self.concentration <= self.CONCENTRATION_TOL
            and self.divergence <= self.DIVERGENCE_TOL
            and self.darcy <= self.DARCY_TOL
            and self.boundary_flux <= self.BOUNDARY_TOL
        )


def residual_report(problem: ManufacturedProblem, samples: int = 1000, seed: int = 0, step: float = 1e-4) -> ResidualReport:
    """Finite-difference check of the forcings and the Darcy law.

    The concentration residual is scaled by 1 + |g|; the others are absolute.
    """
    rng = np.random.default_rng(seed)
    times = np.concatenate([ORACLE_TIMES, rng.uniform(0.0, 1.0, 20)])
    x, y = rng.uniform(0.0, 1.0, samples), rng.uniform(0.0, 1.0, samples)
    t = times[np.arange(samples) % len(times)]
    coeffs = problem.coeffs

    def grad_c(xx, yy, tt):
        return np.stack([_central(problem.exact_c, xx, yy, tt, step, 0), _central(problem.exact_c, xx, yy, tt, step, 1)], axis=-1)

    def flux(xx, yy, tt):
        return np.einsum("...ij,...j->...i", coeffs.D(problem.exact_u(xx, yy, tt)), grad_c(xx, yy, tt))

    u = problem.exact_u(x, y, t)
    g = problem.forcing_g(x, y, t)
    div_flux = _central(flux, x, y, t, step, 0)[..., 0] + _central(flux, x, y, t, step, 1)[..., 1]
    c_t = _central(problem.exact_c, x, y, t, step, 2)
    conc = np.abs(c_t - div_flux + np.einsum("...d,...d->...", u, grad_c(x, y, t)) - g) / (1.0 + np.abs(g))

    div_u = _central(problem.exact_u, x, y, t, step, 0)[..., 0] + _central(problem.exact_u, x, y, t, step, 1)[..., 1]
    div = np.abs(div_u - problem.forcing_f(x, y, t))

    grad_p = np.stack([_central(problem.exact_p, x, y, t, step, 0), _central(problem.exact_p, x, y, t, step, 1)], axis=-1)
    mob = coeffs.k(x, y) / coeffs.mu(problem.exact_c(x, y, t))
    darcy = np.abs(u + mob[:, None] * grad_p).max(axis=1)

    # u.n on the four sides
    s = rng.uniform(0.0, 1.0, samples)
    tb = t
    zero, one = np.zeros_like(s), np.ones_like(s)
    boundary = max(
        np.abs(problem.exact_u(zero, s, tb)[:, 0]).max(),
        np.abs(problem.exact_u(one, s, tb)[:, 0]).max(),
        np.abs(problem.exact_u(s, zero, tb)[:, 1]).max(),
        np.abs(problem.exact_u(s, one, tb)[:, 1]).max(),
    )
    return ResidualReport(
        problem=problem.name,
        samples=samples,
        concentration=float(conc.max()),
        divergence=float(div.max()),
        darcy=float(darcy.max()),
        boundary_flux=float(boundary),
    )


def verify_problem(problem: ManufacturedProblem, samples: int = 1000, seed: int = 0) -> ResidualReport:
    report = residual_report(problem, samples=samples, seed=seed)
    if not report.passed:
        logger.error(f"❌ Problem '{problem.name}' failed the residual gate: {report}")
        raise ProblemInconsistent(
            f"Problem '{problem.name}' is inconsistent: concentration {report.concentration:.2e}, "
            f"divergence {report.divergence:.2e}, darcy {report.darcy:.2e}, boundary {report.boundary_flux:.2e}"
        )
    logger.info(f"✅ Problem '{problem.name}' passed the residual gate ({samples} samples)")
    return report
