"""Studies built from full runs: convergence tables, the fixed-tau stability
sweep, the order-1 parity cross-check and single runs.

Every study first passes its problem through the PDE-residual gate.  Report
files are rewritten whole (temporary file, then rename) on every call.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field as PydanticField, field_validator, model_validator

import config
from miscible.errors import MiscibleError, NonPositiveError, StudyAborted
from miscible.norms import (
    ERROR_COLUMNS,
    ErrorRow,
    convergence_order,
    hdiv_error,
    l2_error_scalar,
    l2_error_vector,
    least_squares_order,
)
from miscible.problems import PROBLEMS, ManufacturedProblem, get_problem, verify_problem
from miscible.scheme import RunConfig, TimeState, postprocess, run
from miscible.spaces import Field

logger = logging.getLogger(__name__)

DEFAULT_CONVERGENCE_MS = (8, 16, 32)
FULL_CONVERGENCE_MS = (8, 16, 32, 64)
DEFAULT_STABILITY_MS = (8, 16, 32, 64)
DEFAULT_STABILITY_TAUS = (1 / 20, 1 / 30, 1 / 40)
PARITY_MS = (8, 16)
DIVERGENCE_TOL = 1e-10

# plot-data quantity -> ErrorRow column
STABILITY_QUANTITIES = {
    "c": "err_c_L2",
    "u": "err_u_L2",
    "p": "err_p_L2",
    "uhat": "err_uhat_L2",
    "phat": "err_phat_L2",
}


def _fraction(v):
    if isinstance(v, str):
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"not a number or fraction: {v!r}") from e
    return v


# =====================================================
# PYDANTIC MODELS
# =====================================================
class StudySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["convergence", "stability"]
    Ms: list[int] = PydanticField(default_factory=list)
    taus: Optional[list[float]] = None
    problem: str = "paper2d"
    out_dir: str = config.OUTPUT_DIR
    T_final: float = PydanticField(default=1.0, gt=0.0)
    full: bool = False
    jobs: int = PydanticField(default=config.JOBS, ge=1)
    quad_assembly: int = PydanticField(default=config.QUAD_ASSEMBLY, ge=1, le=8)
    quad_norm: int = PydanticField(default=config.QUAD_NORM, ge=1, le=8)
    cg_tol: float = PydanticField(default=config.CG_TOL, gt=0.0)
    saddle_tol: float = PydanticField(default=config.SADDLE_TOL, gt=0.0)
    mixed_order: int = PydanticField(default=0, ge=0, le=1)

    @field_validator("taus", mode="before")
    @classmethod
    def parse_taus(cls, v):
        if v is None:
            return v
        if isinstance(v, str):
            v = [s for s in v.split(",") if s.strip()]
        return [_fraction(s) for s in v]

    @field_validator("T_final", mode="before")
    @classmethod
    def parse_T(cls, v):
        return _fraction(v)

    @model_validator(mode="after")
    def fill_and_check(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem '{self.problem}', expected one of {sorted(PROBLEMS)}")
        if not self.Ms:
            if self.kind == "convergence":
                Ms = FULL_CONVERGENCE_MS if self.full else DEFAULT_CONVERGENCE_MS
            else:
                Ms = DEFAULT_STABILITY_MS
            object.__setattr__(self, "Ms", list(Ms))
        if self.kind == "stability" and self.taus is None:
            object.__setattr__(self, "taus", list(DEFAULT_STABILITY_TAUS))

        if any(M < 1 for M in self.Ms):
            raise ValueError(f"M values must be positive, got {self.Ms}")
        if any(b <= a for a, b in zip(self.Ms, self.Ms[1:])):
            raise ValueError(f"M values must increase strictly, got {self.Ms}")
        if self.kind == "convergence":
            if self.taus is not None:
                raise ValueError("convergence studies use tau = 1/M^2, do not pass tau")
            for M in self.Ms[1:]:
                ratio = M // self.Ms[0]
                if M % self.Ms[0] or ratio & (ratio - 1):
                    raise ValueError(f"convergence M values must be {self.Ms[0]} times powers of 2, got {self.Ms}")
        if self.taus is not None and any(t <= 0.0 for t in self.taus):
            raise ValueError(f"time steps must be positive, got {self.taus}")
        return self

    def tau_for(self, M: int) -> float:
        """Convergence rule tau = 1/M^2."""
        return 1.0 / M**2

    def run_config(self, M: int, tau: float, mixed_order: int | None = None, out_dir: str | None = None) -> RunConfig:
        return RunConfig(
            M=M,
            tau=tau,
            T_final=self.T_final,
            problem=self.problem,
            quad_assembly=self.quad_assembly,
            quad_norm=self.quad_norm,
            cg_tol=self.cg_tol,
            saddle_tol=self.saddle_tol,
            mixed_order=self.mixed_order if mixed_order is None else mixed_order,
            out_dir=out_dir if out_dir is not None else self.out_dir,
        )


def _orders(rows: list[ErrorRow]) -> tuple[dict[str, Optional[list[float]]], dict[str, Optional[float]]]:
    """Pairwise and least-squares orders per error column (None where undefined)."""
    pairwise: dict[str, Optional[list[float]]] = {}
    slopes: dict[str, Optional[float]] = {}
    for col in ERROR_COLUMNS:
        pairs = [(r.h, getattr(r, col)) for r in rows]
        if len(pairs) < 2 or any(e is None for _, e in pairs):
            pairwise[col], slopes[col] = None, None
            continue
        try:
            pairwise[col] = convergence_order(pairs)
            slopes[col] = least_squares_order(pairs)
        except NonPositiveError:
            pairwise[col], slopes[col] = None, None
    return pairwise, slopes


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.10e}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def rows_csv(rows: list[ErrorRow]) -> str:
    """CSV text of error rows; timings are left out so reruns compare byte for byte."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["M", "tau", *ERROR_COLUMNS])
    for r in rows:
        writer.writerow([r.M, f"{r.tau:.10e}", *(_fmt(getattr(r, col)) for col in ERROR_COLUMNS)])
    return buf.getvalue()


class ConvergenceReport(BaseModel):
    problem: str
    rows: list[ErrorRow]
    orders: dict[str, Optional[list[float]]] = PydanticField(default_factory=dict)
    slopes: dict[str, Optional[float]] = PydanticField(default_factory=dict)
    complete: bool = True

    @classmethod
    def from_rows(cls, problem: str, rows: list[ErrorRow], complete: bool = True) -> "ConvergenceReport":
        rows = sorted(rows, key=lambda r: r.M)
        orders, slopes = _orders(rows)
        return cls(problem=problem, rows=rows, orders=orders, slopes=slopes, complete=complete)

    def order(self, column: str, pair: int = -1) -> float:
        """Pairwise order of a column; the finest pair by default."""
        values = self.orders.get(column)
        if not values:
            raise KeyError(f"No order available for {column}")
        return values[pair]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        _atomic_write(path, rows_csv(self.rows))
        return path

    def to_markdown(self, path: str | Path) -> Path:
        """One error and one order column per quantity, one line per M."""
        columns = [c for c in ERROR_COLUMNS if any(getattr(r, c) is not None for r in self.rows)]
        lines = [f"## {self.problem}" + ("" if self.complete else " (incomplete)"), ""]
        lines.append("| M | tau | " + " | ".join(f"{c} | order" for c in columns) + " |")
        lines.append("|---|---|" + "---|---|" * len(columns))
        for i, r in enumerate(self.rows):
            cells = [str(r.M), f"1/{round(1 / r.tau)}" if abs(1 / r.tau - round(1 / r.tau)) < 1e-9 else f"{r.tau:.4g}"]
            for c in columns:
                err = getattr(r, c)
                orders = self.orders.get(c)
                cells.append("" if err is None else f"{err:.3e}")
                cells.append(f"{orders[i - 1]:.2f}" if orders and i > 0 else "")
            lines.append("| " + " | ".join(cells) + " |")
        slopes = [f"{c}: {self.slopes[c]:.2f}" for c in columns if self.slopes.get(c) is not None]
        if slopes:
            lines += ["", "Least-squares orders: " + ", ".join(slopes)]
        path = Path(path)
        _atomic_write(path, "\n".join(lines) + "\n")
        return path

    def write(self, out_dir: str | Path, stem: str) -> None:
        out_dir = Path(out_dir)
        self.to_csv(out_dir / f"{stem}.csv")
        self.to_markdown(out_dir / f"{stem}.md")
        timings = {str(r.M): r.wall_time_seconds for r in self.rows}
        _atomic_write(out_dir / f"{stem}_timings.json", json.dumps(timings, indent=2) + "\n")


# =====================================================
# ROWS
# =====================================================
def error_row(
    state: TimeState,
    problem: ManufacturedProblem,
    run_config: RunConfig,
    uhat: Field | None = None,
    phat: Field | None = None,
    wall_time: float = 0.0,
) -> ErrorRow:
    """Errors of a finished run at t_N; pressures compared at zero mean."""
    t, deg = state.t, run_config.quad_norm
    return ErrorRow(
        M=run_config.M,
        tau=run_config.tau,
        err_c_L2=l2_error_scalar(state.c, problem.exact_c, t, deg),
        err_u_L2=l2_error_vector(state.u, problem.exact_u, t, deg),
        err_u_Hdiv=hdiv_error(state.u, problem.exact_u, problem.exact_divu, t, deg),
        err_p_L2=l2_error_scalar(state.p, problem.exact_p, t, deg, normalize_mean=True),
        err_uhat_L2=None if uhat is None else l2_error_vector(uhat, problem.exact_u, t, deg),
        err_phat_L2=None if phat is None else l2_error_scalar(phat, problem.exact_p, t, deg, normalize_mean=True),
        wall_time_seconds=wall_time,
    )


def _run_row(run_config: RunConfig) -> ErrorRow:
    """One full run plus post-processing; takes only the config so it pickles."""
    problem = get_problem(run_config.problem)
    started = time.perf_counter()
    state, diagnostics = run(run_config, problem)
    uhat, phat = postprocess(state, run_config, problem)
    defect = diagnostics.max_divergence_defect
    if defect > DIVERGENCE_TOL:
        logger.warning(f"⚠️ M={run_config.M}: divergence identity defect {defect:.2e} above {DIVERGENCE_TOL:.0e}")
    return error_row(state, problem, run_config, uhat, phat, wall_time=time.perf_counter() - started)


def _run_rows(configs: list[RunConfig], jobs: int) -> tuple[list[ErrorRow], Optional[BaseException]]:
    """Rows in input order; stops at the first failure and returns it alongside the finished rows."""
    rows: list[ErrorRow] = []
    if jobs <= 1 or len(configs) <= 1:
        for rc in configs:
            try:
                rows.append(_run_row(rc))
            except MiscibleError as e:
                return rows, e
        return rows, None

    with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
        futures = [pool.submit(_run_row, rc) for rc in configs]
        failure = None
        for future in futures:
            try:
                rows.append(future.result())
            except MiscibleError as e:
                failure = failure or e
    return rows, failure


def _gate(problem_name: str) -> ManufacturedProblem:
    problem = get_problem(problem_name)
    verify_problem(problem)
    return problem


# =====================================================
# STUDIES
# =====================================================
def run_convergence(spec: StudySpec) -> ConvergenceReport:
    """Full runs with tau = 1/M^2 for every M, errors at t_N and their orders."""
    _gate(spec.problem)
    logger.info(f"📊 Convergence study '{spec.problem}': M = {spec.Ms}, jobs = {spec.jobs}")

    configs = [spec.run_config(M, spec.tau_for(M)) for M in spec.Ms]
    rows, failure = _run_rows(configs, spec.jobs)
    report = ConvergenceReport.from_rows(spec.problem, rows, complete=failure is None)
    report.write(spec.out_dir, f"convergence_{spec.problem}")

    if failure is not None:
        logger.error(f"❌ Convergence study aborted after {len(rows)} of {len(configs)} rows: {failure}")
        raise StudyAborted(f"Convergence study aborted: {failure}", report=report) from failure

    for col in ("err_c_L2", "err_u_L2", "err_p_L2", "err_uhat_L2", "err_phat_L2"):
        if report.orders.get(col):
            logger.info(f"  {col}: finest-pair order {report.order(col):.2f}")
    logger.info(f"✅ Convergence study written to {spec.out_dir}")
    return report


class ParityRow(BaseModel):
    M: int
    uhat_post: float
    uhat_direct: float
    phat_post: float
    phat_direct: float

    @property
    def ratio_u(self) -> float:
        return self.uhat_direct / self.uhat_post

    @property
    def ratio_p(self) -> float:
        return self.phat_direct / self.phat_post


class ParityReport(BaseModel):
    problem: str
    rows: list[ParityRow]

    def to_csv(self, path: str | Path) -> Path:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["M", "uhat_post", "uhat_direct", "ratio_u", "phat_post", "phat_direct", "ratio_p"])
        for r in self.rows:
            writer.writerow(
                [r.M, *(_fmt(v) for v in (r.uhat_post, r.uhat_direct, r.ratio_u, r.phat_post, r.phat_direct, r.ratio_p))]
            )
        path = Path(path)
        _atomic_write(path, buf.getvalue())
        return path


def run_parity(spec: StudySpec, base: ConvergenceReport | None = None) -> ParityReport:
    """Order-1 (RT1, P1Disc) transport loop against the post-processed order-0 loop."""
    _gate(spec.problem)
    Ms = [M for M in spec.Ms if M in PARITY_MS] or list(spec.Ms[:2])
    logger.info(f"📊 Parity check '{spec.problem}': M = {Ms}")

    post = {r.M: r for r in base.rows} if base is not None else {}
    missing = [M for M in Ms if M not in post]
    if missing:
        rows, failure = _run_rows([spec.run_config(M, spec.tau_for(M), mixed_order=0) for M in missing], spec.jobs)
        if failure is not None:
            raise StudyAborted(f"Parity check aborted: {failure}") from failure
        post.update({r.M: r for r in rows})

    direct_dir = str(Path(spec.out_dir) / "order1")
    direct, failure = _run_rows(
        [spec.run_config(M, spec.tau_for(M), mixed_order=1, out_dir=direct_dir) for M in Ms], spec.jobs
    )
    if failure is not None:
        raise StudyAborted(f"Parity check aborted: {failure}") from failure

    report = ParityReport(
        problem=spec.problem,
        rows=[
            ParityRow(
                M=d.M,
                uhat_post=post[d.M].err_uhat_L2,
                uhat_direct=d.err_u_L2,
                phat_post=post[d.M].err_phat_L2,
                phat_direct=d.err_p_L2,
            )
            for d in sorted(direct, key=lambda r: r.M)
        ],
    )
    report.to_csv(Path(spec.out_dir) / f"parity_{spec.problem}.csv")
    for r in report.rows:
        logger.info(f"  M={r.M}: direct/post velocity {r.ratio_u:.3f}, pressure {r.ratio_p:.3f}")
    return report


class StabilityReport(BaseModel):
    problem: str
    taus: list[float]
    Ms: list[int]
    rows: list[ErrorRow]

    def error(self, tau: float, M: int, quantity: str = "c") -> Optional[float]:
        col = STABILITY_QUANTITIES[quantity]
        for r in self.rows:
            if r.M == M and abs(r.tau - tau) <= 1e-12 * tau:
                return getattr(r, col)
        raise KeyError(f"No stability row for tau={tau}, M={M}")

    def plateau(self, tau: float, quantity: str = "c") -> float:
        """Error at the finest M for a fixed tau."""
        return self.error(tau, self.Ms[-1], quantity)

    def plot_data(self, quantity: str) -> str:
        header = "# M " + " ".join(f"tau=1/{round(1 / t)}" for t in self.taus)
        lines = [header]
        for M in self.Ms:
            lines.append(f"{M} " + " ".join(_fmt(self.error(t, M, quantity)) or "nan" for t in self.taus))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        _atomic_write(out_dir / f"stability_{self.problem}.csv", rows_csv(self.rows))
        lines = ["| tau | M | err_c_L2 | err_u_L2 | err_p_L2 | err_uhat_L2 | err_phat_L2 |", "|---|---|---|---|---|---|---|"]
        for r in self.rows:
            errs = " | ".join(f"{getattr(r, c):.3e}" for c in STABILITY_QUANTITIES.values())
            lines.append(f"| 1/{round(1 / r.tau)} | {r.M} | {errs} |")
        _atomic_write(out_dir / f"stability_{self.problem}.md", "\n".join(lines) + "\n")
        for quantity in STABILITY_QUANTITIES:
            _atomic_write(out_dir / f"stability_{quantity}.dat", self.plot_data(quantity))


def run_stability(spec: StudySpec) -> StabilityReport:
    """Errors at T for every (tau, M) pair with tau held fixed while M grows."""
    _gate(spec.problem)
    taus = list(spec.taus or DEFAULT_STABILITY_TAUS)
    logger.info(f"📊 Stability sweep '{spec.problem}': tau = {[f'1/{round(1 / t)}' for t in taus]}, M = {spec.Ms}")

    configs = [
        spec.run_config(M, tau, out_dir=str(Path(spec.out_dir) / f"tau_1_{round(1 / tau)}"))
        for tau in taus
        for M in spec.Ms
    ]
    rows, failure = _run_rows(configs, spec.jobs)
    if failure is not None:
        logger.error(f"❌ Stability sweep aborted after {len(rows)} of {len(configs)} runs: {failure}")
        raise StudyAborted(f"Stability sweep aborted: {failure}") from failure

    report = StabilityReport(
        problem=spec.problem,
        taus=taus,
        Ms=list(spec.Ms),
        rows=sorted(rows, key=lambda r: (-r.tau, r.M)),
    )
    report.write(spec.out_dir)
    for tau in taus:
        logger.info(f"  tau=1/{round(1 / tau)}: plateau err_c_L2 {report.plateau(tau):.3e}")
    logger.info(f"✅ Stability sweep written to {spec.out_dir}")
    return report


def run_single(run_config: RunConfig, dump: bool = False) -> tuple[TimeState, ErrorRow]:
    """One run, one error row; with dump the final fields are written next to it."""
    problem = _gate(run_config.problem)
    started = time.perf_counter()
    state, _ = run(run_config, problem)
    uhat, phat = postprocess(state, run_config, problem)
    row = error_row(state, problem, run_config, uhat, phat, wall_time=time.perf_counter() - started)

    if run_config.out_dir:
        out = Path(run_config.out_dir)
        stem = f"single_{problem.name}_M{run_config.M}"
        _atomic_write(out / f"{stem}.csv", rows_csv([row]))
        if dump:
            fields = {
                "c": state.c.coeffs.tolist(),
                "u": state.u.coeffs.tolist(),
                "p": state.p.coeffs.tolist(),
                "uhat": uhat.coeffs.tolist(),
                "phat": phat.coeffs.tolist(),
            }
            _atomic_write(out / f"{stem}_fields.json", json.dumps({"t": state.t, **fields}) + "\n")
    logger.info(
        f"✅ Single run {problem.name} M={row.M}: c {row.err_c_L2:.3e}, u {row.err_u_L2:.3e}, p {row.err_p_L2:.3e}"
    )
    return state, row
