"""End-to-end acceptance criteria, each at its stated tolerance and time limit.

Every test records one PASS/FAIL line; the lines are printed together in the
terminal summary (and immediately when run with ``-s``).
"""

import time

import numpy as np
import pytest

from spectral_fio.action import gradient_grid
from spectral_fio.config import SCENARIOS, default_config
from spectral_fio.io.reporting import ArtifactWriter
from spectral_fio.pipelines import PipelineReport, _anchor_chart, _flow_quality, _stone_job, run_pipeline

ONE_D = ("free_1d", "gaussian_bump_1d")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def pipeline_report(workdir):
    """Run each (scenario, pipeline) at most once per module."""
    cache = {}

    def get(scenario: str, pipeline: str) -> PipelineReport:
        key = (scenario, pipeline)
        if key not in cache:
            cfg = default_config(scenario)
            cfg.cache_dir = str(workdir / "cache")
            rep = run_pipeline(pipeline, cfg, workdir / scenario)
            assert rep.status in ("pass", "fail"), f"{scenario}/{pipeline}: {rep.status} {rep.reason}"
            cache[key] = rep
        return cache[key]

    return get


def record(log, number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {title}: {detail}"
    log.append(line)
    print(line)


def value(rep: PipelineReport, name: str) -> float:
    return rep.check(name).value


def test_criterion_1_gradient_identities(acceptance_log):
    errors, start = {}, time.perf_counter()
    for name in ONE_D:
        cfg = default_config(name)
        sys = cfg.system_config()
        chart = _anchor_chart(cfg, sys, PipelineReport("A", name))
        grads = gradient_grid(chart, 5, fd_step=cfg.tolerances.fd_step)
        assert len(grads) == 125
        errors[name] = max(max(g.dzS_error, g.dyS_error) for g in grads)
    elapsed = time.perf_counter() - start
    passed = all(e < 1e-6 for e in errors.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errors.items()) + f" (< 1e-6); {elapsed:.1f} s (< 60 s)"
    record(acceptance_log, 1, "gradient identities on a 5x5x5 grid", passed, detail)
    assert passed, detail


def test_criterion_2_free_closed_forms(acceptance_log, pipeline_report):
    rep = pipeline_report("free_1d", "A")
    action_err = value(rep, "free_action_closed_form")
    t_err = value(rep, "free_stationary_time")
    passed = action_err < 1e-8 and t_err < 1e-6
    detail = f"action {action_err:.2e} (< 1e-8) over 100 queries, t* {t_err:.2e} (< 1e-6)"
    record(acceptance_log, 2, "free action and stationary time", passed, detail)
    assert passed, detail


def test_criterion_3_containment(acceptance_log, pipeline_report):
    res = {name: value(pipeline_report(name, "A"), "containment") for name in ONE_D}
    passed = all(r < 1e-6 for r in res.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in res.items()) + " (< 1e-6)"
    record(acceptance_log, 3, "phase Lagrangian contained in the relation", passed, detail)
    assert passed, detail


def test_criterion_4_relations(acceptance_log, pipeline_report):
    parts, passed = [], True
    for name in sorted(SCENARIOS):
        rep = pipeline_report(name, "A")
        res, dist = value(rep, "lagrangian_residual"), value(rep, "relation_distance")
        passed &= res < 1e-6 and dist > 0.1
        parts.append(f"{name} residual {res:.1e} distance {dist:.3g}")
    detail = "; ".join(parts) + " (residual < 1e-6, distance > 0.1)"
    record(acceptance_log, 4, "Lagrangian relations", passed, detail)
    assert passed, detail


def test_criterion_5_stone_identity(acceptance_log, workdir):
    devs, start = {}, time.perf_counter()
    for name in ONE_D:
        cfg = default_config(name)
        cfg.cache_dir = str(workdir / "cache")
        for h in (2.0**-3, 2.0**-5):
            devs[(name, h)] = _stone_job((cfg, h))[0].deviation
    elapsed = time.perf_counter() - start
    passed = all(d < 1e-8 for d in devs.values()) and elapsed < 300
    detail = ", ".join(f"{k[0]} h={k[1]:g} {v:.1e}" for k, v in devs.items()) + f" (< 1e-8); {elapsed:.1f} s (< 300 s)"
    record(acceptance_log, 5, "finite-eps Stone identity", passed, detail)
    assert passed, detail


def test_criterion_6_order_gain(acceptance_log, pipeline_report):
    rep = pipeline_report("free_1d", "B")
    assert rep.details["h"] == [2.0**-j for j in range(3, 8)]
    lo, hi, neg = value(rep, "gain_min"), value(rep, "gain_max"), value(rep, "negative_gain")
    passed = 0.8 <= lo and hi <= 1.2 and neg < 0.2
    detail = f"gain in [{lo:.3f}, {hi:.3f}] (within [0.8, 1.2]), negative control {neg:.3f} (< 0.2)"
    record(acceptance_log, 6, "order gain per vanishing symbol on free_1d", passed, detail)
    assert passed, detail


def test_criterion_7_phase_and_amplitude(acceptance_log, pipeline_report):
    parts, passed = [], True
    bound = (1 + 3) / 2 + 0.3
    for name in ONE_D:
        rep = pipeline_report(name, "C")
        err, g = value(rep, "phase_gradient"), value(rep, "amplitude_exponent")
        passed &= err < 0.05 and g <= bound
        parts.append(f"{name} gradient error {100 * err:.2f}% amplitude exponent {g:.3f}")
    detail = "; ".join(parts) + f" (error < 5%, exponent <= {bound})"
    record(acceptance_log, 7, "kernel phase gradient and amplitude class", passed, detail)
    assert passed, detail


def test_criterion_8_resolvent_scaling(acceptance_log, pipeline_report):
    free = pipeline_report("free_1d", "D")
    trap = pipeline_report("double_bump_trapping_1d", "D")
    s_free = value(free, "s_hat")
    excess = value(trap, "s_hat_excess_over_free")
    passed = abs(s_free - 1.0) <= 0.3 and excess > 0
    detail = f"free s_hat {s_free:.3f} (1.0 +- 0.3), trapping exceeds free by {excess:.3f} (> 0)"
    record(acceptance_log, 8, "weighted resolvent h-scaling", passed, detail)
    assert passed, detail


def test_criterion_9_flow_quality(acceptance_log, workdir):
    parts, passed = [], True
    for name in sorted(SCENARIOS):
        cfg = default_config(name)
        rep = PipelineReport("A", name)
        start = time.perf_counter()
        _flow_quality(cfg, cfg.system_config(), rep, ArtifactWriter(workdir / f"flow_{name}"))
        elapsed = time.perf_counter() - start
        vals = {c: value(rep, c) for c in ("energy_drift", "symplectic_residual", "det_defect", "time_reversal")}
        passed &= (
            vals["energy_drift"] < 1e-10
            and vals["symplectic_residual"] < 1e-8
            and vals["det_defect"] < 1e-8
            and vals["time_reversal"] < 1e-8
            and elapsed < 30
        )
        parts.append(f"{name} " + " ".join(f"{k} {v:.1e}" for k, v in vals.items()) + f" in {elapsed:.1f} s")
    detail = "; ".join(parts) + " (drift < 1e-10, others < 1e-8, < 30 s each)"
    record(acceptance_log, 9, "flow quality", passed, detail)
    assert passed, detail
