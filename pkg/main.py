"""Command-line entry point.

    python main.py convergence [--problem paper2d] [--M 8,16,32] [--full] [--jobs 4]
    python main.py stability   [--tau 1/20,1/30,1/40] [--M 8,16,32,64]
    python main.py single      --M 16 --tau 1/256 [--mixed-order 1] [--dump]

Settings come from config.py (environment / .env), then a --config file
(JSON object or `key = value` lines), then the flags.
"""
import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import psutil
from pydantic import BaseModel, ValidationError

import config
from miscible.errors import ConfigError, MiscibleError, StudyAborted
from miscible.harness import StudySpec, run_convergence, run_parity, run_single, run_stability
from miscible.scheme import RunConfig

logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL, logging.INFO),
    format='%(asctime)s:%(levelname)s:%(message)s'
)
logger = logging.getLogger("main")

# file keys and flag names -> model field names
ALIASES = {
    "T": "T_final",
    "out": "out_dir",
    "tol": "cg_tol",
}


# =====================================================
# PYDANTIC MODELS
# =====================================================
class FailureRecord(BaseModel):
    error_type: str
    message: str
    subcommand: Optional[str] = None
    arguments: list[str] = []
    partial_report: Optional[str] = None


# =====================================================
# ARGUMENTS
# =====================================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Characteristics-mixed FEM for miscible displacement: runs and convergence studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", help="manufactured problem id (paper2d, constant, linear_darcy, tensor2d)")
    common.add_argument("--M", help="cells per side; comma list for studies")
    common.add_argument("--tau", help="time step, e.g. 1/64; comma list for stability")
    common.add_argument("--T", help="final time (default 1.0)")
    common.add_argument("--out", help=f"output directory (default {config.OUTPUT_DIR})")
    common.add_argument("--quad-assembly", type=int, help="assembly quadrature degree")
    common.add_argument("--quad-norm", type=int, help="error quadrature degree")
    common.add_argument("--tol", type=float, help="CG relative tolerance")
    common.add_argument("--mixed-order", type=int, choices=(0, 1), help="0: RT0/P0 loop, 1: RT1/P1Disc loop")
    common.add_argument("--config", help="JSON or key = value settings file; flags override it")

    conv = sub.add_parser("convergence", parents=[common], help="tau = 1/M^2 convergence table")
    conv.add_argument("--full", action="store_true", default=None, help="add M=64 and the order-1 parity check")
    conv.add_argument("--jobs", type=int, help="rows run in parallel processes")

    stab = sub.add_parser("stability", parents=[common], help="fixed-tau sweep over M")
    stab.add_argument("--jobs", type=int, help="runs in parallel processes")

    single = sub.add_parser("single", parents=[common], help="one run and its error row")
    single.add_argument("--dump", action="store_true", help="write the final fields as JSON")
    return parser


def read_config_file(path: str) -> dict:
    """JSON object, or `key = value` lines with # comments."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return data

    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        data[key] = value
    return data


def _normalize(settings: dict) -> dict:
    out = {}
    for key, value in settings.items():
        key = key.replace("-", "_")
        out[ALIASES.get(key, key)] = value
    return out


def _int_list(value) -> list[int]:
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(s) for s in str(value).split(",") if s.strip()]


def merge_settings(args: argparse.Namespace) -> dict:
    """Config file values overridden by flags that were given."""
    settings = _normalize(read_config_file(args.config)) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "dump") and v is not None}
    settings.update(_normalize(flags))
    return settings


def single_config(settings: dict) -> RunConfig:
    settings = dict(settings)
    if "M" not in settings or "tau" not in settings:
        raise ConfigError("single needs --M and --tau")
    Ms = _int_list(settings.pop("M"))
    if len(Ms) != 1:
        raise ConfigError(f"single takes one M, got {Ms}")
    settings.pop("jobs", None)
    settings.pop("full", None)
    settings.setdefault("out_dir", config.OUTPUT_DIR)
    return RunConfig(M=Ms[0], **settings)


def study_spec(kind: str, settings: dict) -> StudySpec:
    settings = dict(settings)
    if "M" in settings:
        settings["Ms"] = _int_list(settings.pop("M"))
    if "tau" in settings:
        settings["taus"] = settings.pop("tau")
    if "taus" in settings and isinstance(settings["taus"], (int, float)):
        settings["taus"] = [settings["taus"]]
    return StudySpec(kind=kind, **settings)


# =====================================================
# LIFECYCLE
# =====================================================
@contextmanager
def lifespan(command: str):
    started = time.perf_counter()
    logger.info(f"🚀 Starting '{command}'...")
    yield
    rss = psutil.Process().memory_info().rss / 2**20
    logger.info(f"🔄 '{command}' done in {time.perf_counter() - started:.1f}s, RSS {rss:.0f} MB")


def write_failure(out_dir: str, record: FailureRecord) -> Path:
    path = Path(out_dir) / "failure.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


# =====================================================
# COMMANDS
# =====================================================
def run_command(command: str, settings: dict, dump: bool = False) -> None:
    if command == "single":
        run_single(single_config(settings), dump=dump)
    elif command == "stability":
        run_stability(study_spec("stability", settings))
    else:
        spec = study_spec("convergence", settings)
        report = run_convergence(spec)
        if spec.full:
            run_parity(spec, base=report)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(argv)
    out_dir = config.OUTPUT_DIR

    try:
        settings = merge_settings(args)
        out_dir = str(settings.get("out_dir", out_dir))
        with lifespan(args.command):
            run_command(args.command, settings, dump=getattr(args, "dump", False))
        return 0
    except (ConfigError, ValidationError, ValueError) as e:
        logger.error(f"❌ Invalid configuration: {e}")
        write_failure(out_dir, FailureRecord(error_type=type(e).__name__, message=str(e), subcommand=args.command, arguments=argv))
        return 2
    except MiscibleError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        partial = None
        if isinstance(e, StudyAborted) and e.report is not None:
            partial = str(Path(out_dir) / f"convergence_{e.report.problem}.csv")
        write_failure(
            out_dir,
            FailureRecord(
                error_type=type(e).__name__, message=str(e), subcommand=args.command, arguments=argv, partial_report=partial
            ),
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
