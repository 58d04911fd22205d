"""Time loop of the characteristics-mixed scheme and the post-processing solve.

Per step n -> n+1:
  (a) mixed Darcy solve at t_n with mu(c_h^n)            -> u_h^n, p_h^n
  (b) characteristic concentration solve with feet x - u_h^n(x) tau and
      sources at t_n+1                                    -> c_h^n+1
"""
from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import psutil
from pydantic import BaseModel, ConfigDict, Field as PydanticField, field_validator, model_validator

import config
from miscible.assembly import assemble_concentration, assemble_mixed, mixed_spaces
from miscible.linalg import divergence_defect, solve_saddle, solve_spd
from miscible.mesh import Mesh, build_uniform_mesh
from miscible.problems import PROBLEMS, ManufacturedProblem, get_problem
from miscible.spaces import Field, function_space, interpolate_p1

logger = logging.getLogger(__name__)


# =====================================================
# PYDANTIC MODELS
# =====================================================
class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    M: int = PydanticField(ge=1)
    tau: float = PydanticField(gt=0.0)
    T_final: float = PydanticField(default=1.0, gt=0.0)
    problem: str = "paper2d"
    quad_assembly: int = PydanticField(default=config.QUAD_ASSEMBLY, ge=1, le=8)
    quad_norm: int = PydanticField(default=config.QUAD_NORM, ge=1, le=8)
    cg_tol: float = PydanticField(default=config.CG_TOL, gt=0.0)
    saddle_tol: float = PydanticField(default=config.SADDLE_TOL, gt=0.0)
    mixed_order: int = PydanticField(default=0, ge=0, le=1)
    clamp_feet: bool = not config.DEBUG
    out_dir: Optional[str] = None

    @field_validator("tau", "T_final", mode="before")
    @classmethod
    def parse_fraction(cls, v):
        # "1/64" on the command line or in a config file
        if isinstance(v, str):
            try:
                return float(Fraction(v.strip()))
            except (ValueError, ZeroDivisionError) as e:
                raise ValueError(f"not a number or fraction: {v!r}") from e
        return v

    @model_validator(mode="after")
    def check_steps(self):
        steps = self.T_final / self.tau
        if round(steps) < 1 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T_final / tau = {steps} is not a positive integer")
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem '{self.problem}', expected one of {sorted(PROBLEMS)}")
        return self

    @property
    def num_steps(self) -> int:
        return int(round(self.T_final / self.tau))

    @property
    def h(self) -> float:
        return float(np.sqrt(2.0) / self.M)


# =====================================================
# STATE AND DIAGNOSTICS
# =====================================================
@dataclass(frozen=True)
class TimeState:
    """(c_h^n, u_h, p_h) at t = n tau.

    flow_current is True when (u, p) were solved from this state's own c at t;
    after a step they still hold u_h^n, p_h^n while c is c_h^n+1.
    """

    n: int
    t: float
    c: Field
    u: Field
    p: Field
    flow_current: bool = True

    @property
    def mesh(self) -> Mesh:
        return self.c.mesh

    def pressure_mean(self) -> float:
        return float(self.p.space.mean_weights() @ self.p.coeffs)


@dataclass
class StepRecord:
    step: int
    t: float
    phase: str = "step"
    cg_iterations: int = 0
    cg_residual: float = 0.0
    saddle_residual: float = 0.0
    multiplier: float = 0.0
    mean_violation: float = 0.0
    divergence_defect: float = 0.0
    wall_time: float = 0.0
    rss_mb: float = 0.0


@dataclass
class Diagnostics:
    """Per-step records, optionally streamed as JSON lines."""

    records: list[StepRecord] = field(default_factory=list)
    path: Optional[Path] = None
    cg_histories: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def emit(self, record: StepRecord) -> None:
        record.rss_mb = psutil.Process().memory_info().rss / 2**20
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(record)) + "\n")

    @property
    def max_divergence_defect(self) -> float:
        return max((r.divergence_defect for r in self.records), default=0.0)

    @property
    def max_mean_violation(self) -> float:
        return max((r.mean_violation for r in self.records), default=0.0)

    def summary(self) -> dict:
        times = [r.wall_time for r in self.records]
        return {
            "steps": len(self.records),
            "mean_step_seconds": statistics.mean(times) if times else 0.0,
            "total_seconds": sum(times),
            "max_cg_iterations": max((r.cg_iterations for r in self.records), default=0),
            "max_divergence_defect": self.max_divergence_defect,
            "max_mean_violation": self.max_mean_violation,
            "peak_rss_mb": max((r.rss_mb for r in self.records), default=0.0),
        }


# =====================================================
# SOLVE PIECES
# =====================================================
def _resolve(run_config: RunConfig, problem: ManufacturedProblem | None) -> ManufacturedProblem:
    return problem if problem is not None else get_problem(run_config.problem)


def solve_flow(
    mesh: Mesh,
    problem: ManufacturedProblem,
    c: Field,
    t: float,
    run_config: RunConfig,
    order: int,
    record: StepRecord | None = None,
) -> tuple[Field, Field]:
    """Mixed Darcy solve with mu(c) at time t; order 0 -> (RT0, P0), 1 -> (RT1, P1Disc)."""
    system = assemble_mixed(mesh, problem.coeffs, c, t, order=order, quad_degree=run_config.quad_assembly)
    sol = solve_saddle(system, tol=run_config.saddle_tol)
    vkind, pkind = mixed_spaces(order)
    u = Field(function_space(mesh, vkind), sol.u)
    p = Field(function_space(mesh, pkind), sol.p)
    if record is not None:
        record.saddle_residual = sol.residual
        record.multiplier = sol.multiplier
        record.mean_violation = abs(float(system.mean_constraint @ sol.p))
        record.divergence_defect = float(divergence_defect(system, sol).max(initial=0.0) / (1.0 + system.source_sup))
    return u, p


def solve_concentration(
    mesh: Mesh,
    problem: ManufacturedProblem,
    u: Field,
    c_old: Field,
    t_next: float,
    run_config: RunConfig,
    record: StepRecord | None = None,
    history: list | None = None,
) -> Field:
    K, rhs = assemble_concentration(
        mesh,
        problem.coeffs,
        u,
        c_old,
        run_config.tau,
        t_next,
        quad_degree=run_config.quad_assembly,
        clamp=run_config.clamp_feet,
    )
    history = [] if history is None else history
    coeffs = solve_spd(K, rhs, tol=run_config.cg_tol, history=history)
    if record is not None:
        record.cg_iterations = len(history)
        bnorm = np.linalg.norm(rhs)
        record.cg_residual = float(np.linalg.norm(rhs - K @ coeffs) / bnorm) if bnorm > 0 else 0.0
    return Field(c_old.space, coeffs)


# =====================================================
# SCHEME OPERATIONS
# =====================================================
def init(
    run_config: RunConfig,
    problem: ManufacturedProblem | None = None,
    mesh: Mesh | None = None,
    diagnostics: Diagnostics | None = None,
) -> TimeState:
    """c_h^0 = I_h c_0 and the flow solved from it at t = 0."""
    problem = _resolve(run_config, problem)
    mesh = mesh if mesh is not None else build_uniform_mesh(run_config.M)
    started = time.perf_counter()
    record = StepRecord(step=0, t=0.0, phase="init")

    c0 = interpolate_p1(mesh, lambda x, y: problem.exact_c(x, y, 0.0))
    u, p = solve_flow(mesh, problem, c0, 0.0, run_config, run_config.mixed_order, record)

    record.wall_time = time.perf_counter() - started
    if diagnostics is not None:
        diagnostics.emit(record)
    return TimeState(n=0, t=0.0, c=c0, u=u, p=p, flow_current=True)


def step(
    state: TimeState,
    run_config: RunConfig,
    problem: ManufacturedProblem | None = None,
    diagnostics: Diagnostics | None = None,
) -> TimeState:
    problem = _resolve(run_config, problem)
    started = time.perf_counter()
    mesh = state.mesh
    record = StepRecord(step=state.n + 1, t=(state.n + 1) * run_config.tau)

    # (a) flow from c_h^n, reused when the state already carries it
    if state.flow_current:
        u, p = state.u, state.p
        record.mean_violation = abs(state.pressure_mean())
    else:
        u, p = solve_flow(mesh, problem, state.c, state.t, run_config, run_config.mixed_order, record)

    # (b) transport along x - u_h^n tau
    history: list[float] = []
    c_next = solve_concentration(mesh, problem, u, state.c, record.t, run_config, record, history)

    record.wall_time = time.perf_counter() - started
    if diagnostics is not None:
        diagnostics.emit(record)
        diagnostics.cg_histories.append(history)
    return TimeState(n=state.n + 1, t=record.t, c=c_next, u=u, p=p, flow_current=False)


def refresh_flow(
    state: TimeState,
    run_config: RunConfig,
    problem: ManufacturedProblem | None = None,
    diagnostics: Diagnostics | None = None,
) -> TimeState:
    """Re-solve (u, p) from the state's own concentration at its time level."""
    if state.flow_current:
        return state
    problem = _resolve(run_config, problem)
    started = time.perf_counter()
    record = StepRecord(step=state.n, t=state.t, phase="final")
    u, p = solve_flow(state.mesh, problem, state.c, state.t, run_config, run_config.mixed_order, record)
    record.wall_time = time.perf_counter() - started
    if diagnostics is not None:
        diagnostics.emit(record)
    return replace(state, u=u, p=p, flow_current=True)


def run(run_config: RunConfig, problem: ManufacturedProblem | None = None) -> tuple[TimeState, Diagnostics]:
    """N steps followed by a final flow solve at t_N."""
    problem = _resolve(run_config, problem)
    path = None
    if run_config.out_dir:
        path = Path(run_config.out_dir) / f"diagnostics_{problem.name}_M{run_config.M}.jsonl"
    diagnostics = Diagnostics(path=path)

    logger.info(
        f"🚀 Run {problem.name}: M={run_config.M}, tau={run_config.tau:.6g}, "
        f"N={run_config.num_steps}, mixed order {run_config.mixed_order}"
    )
    state = init(run_config, problem, diagnostics=diagnostics)
    report_every = max(1, run_config.num_steps // 10)
    for _ in range(run_config.num_steps):
        state = step(state, run_config, problem, diagnostics)
        if state.n % report_every == 0:
            logger.debug(f"  step {state.n}/{run_config.num_steps}, t={state.t:.4f}")
    state = refresh_flow(state, run_config, problem, diagnostics)

    summary = diagnostics.summary()
    logger.info(
        f"✅ Run {problem.name} M={run_config.M} finished in {summary['total_seconds']:.1f}s "
        f"(max CG iterations {summary['max_cg_iterations']})"
    )
    return state, diagnostics


def postprocess(state: TimeState, run_config: RunConfig, problem: ManufacturedProblem | None = None) -> tuple[Field, Field]:
    """Order-1 re-solve (RT1, P1Disc) of the flow with mu(c_h^n) at the state's time level."""
    problem = _resolve(run_config, problem)
    return solve_flow(state.mesh, problem, state.c, state.t, run_config, order=1)
