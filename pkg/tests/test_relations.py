import csv

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.spatial.distance import cdist

from spectral_fio.errors import ConfigError, NoCrossingError
from spectral_fio.flow import classify_trapping, integrate_variational
from spectral_fio.hamiltonian import PhasePoint, energy_shell_sample, hamiltonian_value
from spectral_fio.relations import (
    CutoffFunction,
    RelationCloud,
    build_relation,
    certify_window,
    check_disjointness,
    corrupt_sample,
    graph_tangent,
    lagrangian_residual,
    reflect,
    seed_grid,
    smooth_step,
    untwist,
    validate_cutoffs,
)


def _seed(center, direction):
    return [(np.array(center, dtype=float), np.array(direction, dtype=float))]


def test_free_relation_sample(free_sys, cutoffs_1d):
    c1, c2 = cutoffs_1d
    s = build_relation(free_sys, 1, c1, c2, _seed([-3.0], [1.0]), 20.0).samples[0]
    assert s.t == pytest.approx(6.0, abs=1e-10)
    np.testing.assert_allclose([*s.left_x, *s.left_xi], [-3.0, -1.0], atol=1e-10)
    np.testing.assert_allclose([*s.right_x, *s.right_xi], [3.0, 1.0], atol=1e-10)


def test_free_relation_wrong_direction(free_sys, cutoffs_1d):
    c1, c2 = cutoffs_1d
    cloud = build_relation(free_sys, 1, c1, c2, _seed([-3.0], [-1.0]), 20.0)
    assert not cloud.samples and cloud.skipped[0][1] == "no_crossing"
    with pytest.raises(NoCrossingError):
        build_relation(free_sys, 1, c1, c2, _seed([-3.0], [-1.0]), 20.0, strict=True)


def test_bump_flight_time_matches_quadrature(bump_sys, cutoffs_1d):
    c1, c2 = cutoffs_1d
    s = build_relation(bump_sys, 1, c1, c2, _seed([-3.0], [1.0]), 20.0).samples[0]
    oracle, _ = quad(lambda x: 1 / np.sqrt(2 * (0.5 - 0.3 * np.exp(-x * x))), -3.0, 3.0, epsabs=1e-13, epsrel=1e-13)
    assert s.t > 6.0
    assert s.t == pytest.approx(oracle, abs=1e-8)


def test_free_relation_is_lagrangian(free_sys_2d):
    c1 = CutoffFunction((-3.0, 0.0), 0.5, 1.0)
    c2 = CutoffFunction((3.0, 0.0), 0.5, 1.0)
    cloud = build_relation(free_sys_2d, 1, c1, c2, seed_grid(c1, 3, 16), 20.0)
    assert len(cloud) >= 3
    assert lagrangian_residual(cloud.samples) < 1e-8
    # analytic tangent of the free flow graph (y, eta) -> (y + t eta, eta), twisted
    s = cloud.samples[0]
    t = s.t
    rows = []
    for e in np.eye(4):
        dy, deta = e[:2], e[2:]
        rows.append(np.concatenate([dy, -deta, dy + t * deta, deta]))
    assert lagrangian_residual([np.array(rows)]) < 1e-12


def test_untwisted_graph_uses_difference_form(bump_sys_2d):
    src = energy_shell_sample(bump_sys_2d, [-3.0, 0.2], [1.0, 0.1])
    frame = integrate_variational(bump_sys_2d, src, 5.0)
    T = graph_tangent(bump_sys_2d, src, frame.point, frame.J)
    assert lagrangian_residual([T], twisted=False) < 1e-8
    assert lagrangian_residual([T], twisted=True) > 0.1


def test_corrupted_sample_is_detected(bump_sys_2d):
    c1 = CutoffFunction((-3.0, 0.0), 0.5, 1.0)
    c2 = CutoffFunction((3.0, 0.0), 0.5, 1.0)
    s = build_relation(bump_sys_2d, 1, c1, c2, _seed([-3.0, 0.0], [1.0, 0.0]), 20.0).samples[0]
    assert lagrangian_residual([s]) < 1e-8
    assert lagrangian_residual([corrupt_sample(bump_sys_2d, s, [0.3, 0.3])]) > 1e-3


def test_disjointness_examples(free_sys, cutoffs_1d):
    c1, c2 = cutoffs_1d
    seeds = seed_grid(c1, 5)
    plus = build_relation(free_sys, 1, c1, c2, seeds, 20.0)
    minus = build_relation(free_sys, -1, c1, c2, seeds, 20.0)
    d = check_disjointness(plus, minus)
    assert d >= 2.0
    assert d == pytest.approx(cdist(plus.as_array(), minus.as_array()).min(), abs=1e-12)
    assert check_disjointness(plus, RelationCloud(-1, [])) == float("inf")
    assert check_disjointness(plus, plus) == 0.0


def test_certify_window(free_sys, trap_sys, cutoffs_1d):
    c1, c2 = cutoffs_1d
    plus = build_relation(free_sys, 1, c1, c2, seed_grid(c1, 3), 20.0)
    win = certify_window(free_sys, plus.samples, 40.0)
    assert len(win) == len(plus)
    assert np.all(win.lower <= win.upper)
    assert len(certify_window(free_sys, [], 40.0)) == 0
    # trapping system: relations over cutoffs on the same side, seeds aimed inwards
    t1 = CutoffFunction((-7.0,), 0.5, 1.0)
    t2 = CutoffFunction((-4.75,), 0.4, 0.75)
    cloud = build_relation(trap_sys, 1, t1, t2, seed_grid(t1, 3), 20.0)
    win = certify_window(trap_sys, cloud.samples, 40.0)
    verdicts = [classify_trapping(trap_sys, untwist(s)[1], 40.0).non_trapped for s in cloud.samples]
    assert len(win) == sum(verdicts)


def test_samples_lie_on_the_shell(bump_sys_2d):
    c1 = CutoffFunction((-3.0, 0.0), 0.5, 1.0)
    c2 = CutoffFunction((3.0, 0.0), 0.5, 1.0)
    for sign in (1, -1):
        for s in build_relation(bump_sys_2d, sign, c1, c2, seed_grid(c1, 3, 16), 20.0):
            src, tgt = untwist(s)
            assert abs(hamiltonian_value(bump_sys_2d, src) - 0.5) < 1e-10
            assert abs(hamiltonian_value(bump_sys_2d, tgt) - 0.5) < 1e-10
            assert c1.in_support(s.left_x if sign > 0 else s.left_x)


def test_reflection_matches_backward_relation(bump_sys_2d):
    c1 = CutoffFunction((-3.0, 0.0), 0.5, 1.0)
    c2 = CutoffFunction((3.0, 0.0), 0.5, 1.0)
    plus = build_relation(bump_sys_2d, 1, c1, c2, _seed([-3.0, 0.0], [1.0, 0.0]), 20.0).samples[0]
    r = reflect(plus)
    # time-reversed seed: start from the target and flow backwards into supp chi1
    minus = build_relation(bump_sys_2d, -1, c2, c1, [(plus.right_x, plus.right_xi)], 20.0).samples[0]
    np.testing.assert_allclose(r.as_vector(), minus.as_vector(), atol=1e-8)
    assert r.t == pytest.approx(minus.t, abs=1e-8)
    assert lagrangian_residual([r]) < 1e-8


def test_cutoff_validation():
    with pytest.raises(ConfigError):
        validate_cutoffs(CutoffFunction((0.5,), 0.2, 0.4), CutoffFunction((3.0,), 0.5, 1.0), 1.0)
    with pytest.raises(ConfigError):
        validate_cutoffs(CutoffFunction((-3.0,), 0.5, 1.0), CutoffFunction((-2.5,), 0.5, 1.0), 1.0)
    with pytest.raises(ConfigError):
        CutoffFunction((0.0,), 1.0, 0.5)
    c = CutoffFunction((2.0,), 0.5, 1.0)
    assert c(np.array([[2.3]]))[0] == 1.0 and c(np.array([[3.0]]))[0] == 0.0
    s = np.linspace(-1, 2, 31)
    assert np.all(np.diff(smooth_step(s)) >= 0)


def test_relation_csv(tmp_path, free_sys, cutoffs_1d):
    c1, c2 = cutoffs_1d
    cloud = build_relation(free_sys, 1, c1, c2, seed_grid(c1, 3), 20.0)
    rows = list(csv.reader(cloud.to_csv(tmp_path / "rel.csv").open()))
    assert rows[0] == ["sign", "t", "y1", "eta1", "x1", "xi1"]
    assert float(rows[1][3]) > 0  # the source momentum is written untwisted
