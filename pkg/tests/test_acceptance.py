"""Convergence and stability studies on the paper2d problem.

Minutes of runtime; run with `pytest -m slow`.
"""
import json

import pytest

from miscible.harness import StudySpec, run_convergence, run_parity, run_stability

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def convergence(tmp_path_factory):
    out = tmp_path_factory.mktemp("convergence")
    spec = StudySpec(kind="convergence", Ms=[8, 16, 32], problem="paper2d", out_dir=str(out))
    return spec, run_convergence(spec)


def test_concentration_is_second_order(convergence):
    _, report = convergence
    assert 1.85 <= report.order("err_c_L2") <= 2.15


@pytest.mark.parametrize("column", ["err_u_L2", "err_u_Hdiv", "err_p_L2"])
def test_velocity_and_pressure_are_first_order(convergence, column):
    _, report = convergence
    assert 0.85 <= report.order(column) <= 1.15


@pytest.mark.parametrize("column", ["err_uhat_L2", "err_phat_L2"])
def test_postprocessing_is_second_order(convergence, column):
    _, report = convergence
    assert 1.85 <= report.order(column) <= 2.15


def test_postprocessed_velocity_beats_order_zero(convergence):
    _, report = convergence
    assert all(r.err_uhat_L2 < r.err_u_L2 for r in report.rows)


def test_divergence_identity_at_every_step(convergence):
    spec, _ = convergence
    for M in spec.Ms:
        path = f"{spec.out_dir}/diagnostics_paper2d_M{M}.jsonl"
        with open(path, encoding="utf-8") as f:
            defects = [json.loads(line)["divergence_defect"] for line in f]
        assert len(defects) == M * M + 2
        assert max(defects) <= 1e-10


def test_order_one_loop_matches_postprocessing(convergence):
    spec, report = convergence
    parity = run_parity(spec, base=report)
    assert [r.M for r in parity.rows] == [8, 16]
    for r in parity.rows:
        assert 1 / 1.5 <= r.ratio_u <= 1.5
        assert 1 / 1.5 <= r.ratio_p <= 1.5


def test_fixed_tau_errors_plateau_at_order_tau(tmp_path):
    spec = StudySpec(kind="stability", Ms=[8, 16, 32, 64], taus=[1 / 20, 1 / 40], out_dir=str(tmp_path))
    report = run_stability(spec)
    for tau in spec.taus:
        assert report.error(tau, 64) <= report.error(tau, 8)
        e32, e64 = report.error(tau, 32), report.error(tau, 64)
        assert abs(e64 - e32) <= 0.25 * e32
    assert 1.3 <= report.plateau(1 / 20) / report.plateau(1 / 40) <= 3.5


def test_long_run_residuals(tmp_path):
    from miscible.scheme import RunConfig, run

    state, diagnostics = run(RunConfig(M=16, tau=1 / 256, out_dir=str(tmp_path)))
    assert state.n == 256
    steps = [r for r in diagnostics.records if r.phase == "step"]
    assert all(r.cg_residual <= 1e-11 for r in steps)
    assert all(h[-1] <= 1.01 * min(h) for h in diagnostics.cg_histories)
