import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from spectral_fio.action import (
    build_chart,
    build_phase_lagrangian,
    central_field_determinant,
    containment_residual,
    find_conjugate_time,
    gradient_grid,
    shooting_solve,
    action_value,
    stationary_point_solve,
    stationary_time_scan,
    verify_gradients,
)
from spectral_fio.errors import NoStationaryPointError, SingularJacobianError
from spectral_fio.flow import flow_map
from spectral_fio.hamiltonian import PhasePoint, PotentialModel, SystemConfig
from spectral_fio.relations import make_sample, untwist
from dataclasses import replace


def bump_rhs(t, z):
    return [z[1], 0.6 * z[0] * np.exp(-z[0] ** 2)]


def oracle_flight_time():
    return quad(lambda x: 1 / np.sqrt(2 * (0.5 - 0.3 * np.exp(-x * x))), -3.0, 3.0, epsabs=1e-13, epsrel=1e-13)[0]


@pytest.fixture(scope="module")
def free_chart(free_sys):
    return build_chart(free_sys, [0.0], [1.0], 2.0, window={"t": (1.5, 2.5), "y": [(-0.5, 0.5)], "z": [(1.5, 2.5)]})


@pytest.fixture(scope="module")
def bump_chart(bump_sys):
    T = oracle_flight_time()
    eta = np.sqrt(2 * (0.5 - 0.3 * np.exp(-9.0)))
    return build_chart(bump_sys, [-3.0], [eta], T, window={"t": (T - 1, T + 1), "y": [(-3.3, -2.7)], "z": [(2.7, 3.3)]})


def test_free_determinant(free_sys, free_sys_2d):
    assert central_field_determinant(free_sys, [0.0], [1.0], 3.0) == pytest.approx(3.0, abs=1e-12)
    assert central_field_determinant(free_sys_2d, [0.0, 1.0], [0.6, 0.8], 2.5) == pytest.approx(6.25, abs=1e-11)
    assert central_field_determinant(free_sys, [0.0], [1.0], 0.0) == 0.0


def test_bump_determinant_matches_finite_differences(bump_sys):
    det = central_field_determinant(bump_sys, [-3.0], [1.0], 6.0)
    d = 1e-6
    xp = flow_map(bump_sys, PhasePoint([-3.0], [1.0 + d]), 6.0, tol=1e-12).x[0]
    xm = flow_map(bump_sys, PhasePoint([-3.0], [1.0 - d]), 6.0, tol=1e-12).x[0]
    assert det == pytest.approx((xp - xm) / (2 * d), abs=1e-5)


def test_conjugate_time_of_a_lens():
    lens = SystemConfig(2, 2.0, 0.5, PotentialModel.gaussian([[0.0, 0.0]], [-0.5], [1.0]))
    tc = find_conjugate_time(lens, [-3.0, 0.0], [1.0, 0.0], 12.0)
    before = central_field_determinant(lens, [-3.0, 0.0], [1.0, 0.0], tc - 0.05)
    after = central_field_determinant(lens, [-3.0, 0.0], [1.0, 0.0], tc + 0.05)
    assert before * after < 0
    with pytest.raises(SingularJacobianError):
        build_chart(lens, [-3.0, 0.0], [1.0, 0.0], tc)
    free = SystemConfig(2, 1.0, 0.5)
    with pytest.raises(NoStationaryPointError):
        find_conjugate_time(free, [0.0, 0.0], [1.0, 0.0], 5.0, samples=20)


def test_chart_rejects_degenerate_anchors(free_sys):
    with pytest.raises(SingularJacobianError):
        build_chart(free_sys, [0.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        build_chart(free_sys, [0.0], [1.0], 2.0, window={"t": (3.0, 4.0), "y": [(-1, 1)], "z": [(1, 3)]})


def test_chart_discovery_contains_anchor(free_sys):
    chart = build_chart(free_sys, [-3.0], [1.0], 6.0, caps={"t": 3.0, "y": 0.5, "z": 0.5})
    assert chart.contains(6.0, [-3.0], [3.0])
    assert chart.t_window[0] > 0 and chart.nu == 1


def test_free_shooting(free_chart, free_sys_2d):
    sol = shooting_solve(free_chart, 2.0, [0.0], [2.0])
    assert sol.eta[0] == pytest.approx(1.0, abs=1e-12) and sol.residual < 1e-12
    chart2 = build_chart(
        free_sys_2d, [0.0, 0.0], [0.6, 0.8], 5.0, window={"t": (4, 6), "y": [(-0.5, 0.5)] * 2, "z": [(2.5, 3.5), (3.5, 4.5)]}
    )
    sol = shooting_solve(chart2, 5.0, [0.0, 0.0], [3.0, 4.0])
    np.testing.assert_allclose(sol.eta, [0.6, 0.8], atol=1e-12)
    with pytest.raises(ValueError):
        shooting_solve(free_chart, 9.0, [0.0], [2.0])


def test_bump_shooting_matches_bisection(bump_chart):
    T = oracle_flight_time()
    sol = shooting_solve(bump_chart, T, [-3.0], [3.0])

    def miss(eta):
        r = solve_ivp(bump_rhs, (0, T), [-3.0, eta], method="Radau", rtol=1e-12, atol=1e-12)
        return r.y[0, -1] - 3.0

    oracle = brentq(miss, 0.9, 1.1, xtol=1e-13)
    assert sol.eta[0] == pytest.approx(oracle, abs=1e-7)
    # the launch momentum is the shell momentum at y = -3
    assert sol.eta[0] == pytest.approx(np.sqrt(2 * (0.5 - 0.3 * np.exp(-9.0))), abs=1e-7)


def test_shooting_uniqueness(bump_chart):
    T = bump_chart.t0
    a = shooting_solve(bump_chart, T + 0.3, [-2.9], [3.1])
    b = shooting_solve(bump_chart, T + 0.3, [-2.9], [3.1], eta_guess=a.eta * 1.05)
    assert abs(a.eta[0] - b.eta[0]) < 1e-8


def test_free_action_examples(free_chart, free_sys):
    assert action_value(free_chart, 2.0, [0.0], [2.0]) == pytest.approx(2.0, abs=1e-12)
    wide = build_chart(free_sys, [0.0], [1.0], 2.0, window={"t": (1.5, 4.5), "y": [(-0.5, 0.5)], "z": [(1.5, 2.5)]})
    assert action_value(wide, 4.0, [0.0], [2.0]) == pytest.approx(2.5, abs=1e-12)


def test_bump_action_matches_quadrature(bump_chart):
    T = bump_chart.t0
    sol = shooting_solve(bump_chart, T, [-3.0], [3.0])
    r = solve_ivp(bump_rhs, (0, T), [-3.0, sol.eta[0]], method="Radau", rtol=1e-13, atol=1e-13, dense_output=True)

    def lag(t):
        x, v = r.sol(t)
        return 0.5 * v * v - 0.3 * np.exp(-x * x) + 0.5

    S = sum(quad(lag, a, b, epsabs=1e-14, epsrel=1e-14, limit=200)[0] for a, b in zip(np.linspace(0, T, 9), np.linspace(0, T, 9)[1:]))
    assert sol.action == pytest.approx(S, abs=1e-8)


def test_free_gradients_exact(free_chart):
    g = verify_gradients(free_chart, 2.0, [0.0], [2.0])
    assert g.dzS[0] == pytest.approx(1.0, abs=1e-9) and g.dyS[0] == pytest.approx(-1.0, abs=1e-9)
    assert g.dzS_error < 1e-9 and g.dyS_error < 1e-9


def test_difference_error_is_second_order(bump_chart):
    T = bump_chart.t0
    coarse = verify_gradients(bump_chart, T, [-3.0], [3.0], fd_step=0.1, richardson=False)
    fine = verify_gradients(bump_chart, T, [-3.0], [3.0], fd_step=0.05, richardson=False)
    ratio = coarse.dzS_error / fine.dzS_error
    assert 3.0 < ratio < 5.0


def test_bump_gradients_at_anchor(bump_chart):
    g = verify_gradients(bump_chart, bump_chart.t0, [-3.0], [3.0], fd_step=1e-4)
    assert g.dzS_error < 1e-6 and g.dyS_error < 1e-6


def test_gradient_grid_small(bump_chart):
    reps = gradient_grid(bump_chart, points=2, shrink=0.5)
    assert len(reps) == 8
    assert max(max(r.dzS_error, r.dyS_error) for r in reps) < 1e-6


def test_free_stationary_scan(free_chart):
    scan = stationary_time_scan(free_chart, [0.0], [2.0], np.linspace(1.5, 2.5, 5))
    (p,) = scan.points
    assert p.t == pytest.approx(2.0, abs=1e-6)
    assert p.action == pytest.approx(2.0, abs=1e-9)  # sqrt(2 lam) |z - y|
    assert scan.dtS_sign == -1 and scan.sign_errors["minus"] < 1e-6
    assert abs(p.d2tS) > 1e-6
    direct = stationary_point_solve(free_chart, [0.0], [2.0])
    assert direct.t == pytest.approx(p.t, abs=1e-8)


def test_no_stationary_point_in_window(free_sys):
    chart = build_chart(free_sys, [0.0], [2.0 / 5.5], 5.5, window={"t": (5.0, 6.0), "y": [(-0.5, 0.5)], "z": [(1.5, 2.5)]})
    with pytest.raises(NoStationaryPointError):
        stationary_time_scan(chart, [0.0], [2.0], np.linspace(5.0, 6.0, 5))


def test_phase_lagrangian_containment(free_chart, bump_chart):
    p = stationary_point_solve(free_chart, [0.0], [2.0])
    assert build_phase_lagrangian(free_chart, [p]).max_residual < 1e-10
    st_b = stationary_point_solve(bump_chart, [-3.0], [3.0])
    lag = build_phase_lagrangian(bump_chart, [st_b])
    assert lag.max_residual < 1e-6
    # flipping the sign of d_y S breaks containment
    s = lag.samples[0]
    flipped = replace(s, left_xi=-s.left_xi)
    assert containment_residual(bump_chart.sys, flipped) > 0.1


@given(dy=st.floats(-0.25, 0.25), dz=st.floats(-0.25, 0.25), dt=st.floats(-0.4, 0.4))
def test_free_action_closed_form_property(free_sys, dy, dz, dt):
    chart = build_chart(free_sys, [-3.0], [1.0], 6.0, window={"t": (5.5, 6.5), "y": [(-3.3, -2.7)], "z": [(2.7, 3.3)]})
    t, y, z = 6.0 + dt, -3.0 + dy, 3.0 + dz
    assert action_value(chart, t, [y], [z]) == pytest.approx((z - y) ** 2 / (2 * t) + 0.5 * t, abs=1e-10)
