"""Central-field charts, two-point shooting and the action phase S_nu.

Inside a central field the endpoint map eta -> x(t; y, eta) is invertible, so
each (t, y, z) in the chart window has a unique connecting momentum
eta(t, y, z). The action

    S(y, z, t) = int_0^t ( |xdot|^2 / 2 - V(x) + lambda ) ds

along that segment is a generating function: d_z S = xi(t), d_y S = -eta.
The time integral is signed, so charts with t0 < 0 (nu = -1) use the same
formulae.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import NoConvergenceError, NoStationaryPointError, NumericalError, SingularJacobianError
from .flow import DEFAULT_TOL, flow_map, integrate_variational, solve_flow
from .hamiltonian import PhasePoint, SystemConfig, hamiltonian_value
from .relations import RelationSample, make_sample, twist

SINGULAR_DET = 1e-10
DEFAULT_SHOOT_TOL = 1e-9
DEFAULT_FD_STEP = 1e-4
# endpoint residual accepted inside finite-difference stencils; the corrected
# action is then accurate to O(residual^2)
STENCIL_POLISH = 1e-7


def central_field_determinant(sys: SystemConfig, y, eta, t: float, tol: float = DEFAULT_TOL) -> float:
    """det of the d x / d eta block of the flow Jacobian at time t."""
    frame = integrate_variational(sys, PhasePoint(y, eta), t, tol=tol)
    return float(np.linalg.det(frame.dx_deta))


def find_conjugate_time(
    sys: SystemConfig, y, eta, t_max: float, samples: int = 200, tol: float = DEFAULT_TOL
) -> float:
    """First t in (0, t_max] where det dx/deta changes sign (a caustic)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    ts = np.linspace(t_max / samples, t_max, samples)
    dets = [central_field_determinant(sys, y, eta, t, tol) for t in ts]
    for a, b, da, db in zip(ts, ts[1:], dets, dets[1:]):
        if da * db <= 0:
            return float(brentq(lambda t: central_field_determinant(sys, y, eta, t, tol), a, b, xtol=1e-13))
    raise NoStationaryPointError(f"det dx/deta keeps its sign on (0, {t_max}]")


@dataclass(frozen=True)
class ActionChart:
    """Anchor (t0, y0, eta0, z0) and a window T x Y x Z around it."""

    sys: SystemConfig
    t0: float
    y0: np.ndarray
    eta0: np.ndarray
    z0: np.ndarray
    t_window: tuple
    y_box: np.ndarray  # (n, 2) lower/upper bounds
    z_box: np.ndarray
    anchor_det: float
    flow_tol: float = DEFAULT_TOL

    @property
    def nu(self) -> int:
        return 1 if self.t0 > 0 else -1

    @property
    def n(self) -> int:
        return self.sys.n

    def contains(self, t, y, z, slack: float = 1e-9) -> bool:
        y = np.atleast_1d(y)
        z = np.atleast_1d(z)
        lo, hi = self.t_window
        return bool(
            lo - slack <= t <= hi + slack
            and np.all(self.y_box[:, 0] - slack <= y)
            and np.all(y <= self.y_box[:, 1] + slack)
            and np.all(self.z_box[:, 0] - slack <= z)
            and np.all(z <= self.z_box[:, 1] + slack)
        )

    def grid(self, points: int = 5, shrink: float = 1.0):
        """Tensor (t, y, z) grid over the (optionally shrunk) window."""
        def axis(lo, hi, c):
            half = 0.5 * (hi - lo) * shrink
            mid = 0.5 * (hi + lo)
            return np.linspace(mid - half, mid + half, points)

        ts = axis(*self.t_window, None)
        ys = [axis(lo, hi, None) for lo, hi in self.y_box]
        zs = [axis(lo, hi, None) for lo, hi in self.z_box]
        for t in ts:
            for y in itertools.product(*ys):
                for z in itertools.product(*zs):
                    yield float(t), np.array(y), np.array(z)


@dataclass
class ShootingSolution:
    t: float
    y: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    xi: np.ndarray  # momentum at the endpoint
    x_end: np.ndarray
    action: float  # endpoint-corrected action value
    residual: float
    iterations: int
    det: float
    jacobian: np.ndarray = field(repr=False)


def _evaluate(chart: ActionChart, t: float, y: np.ndarray, eta: np.ndarray):
    n = chart.n
    m = 2 * n
    res = solve_flow(chart.sys, PhasePoint(y, eta), t, jacobian=True, action=True, tol=chart.flow_tol)
    zf = res.y[:, -1]
    J = zf[m : m + m * m].reshape(m, m)
    return zf[:n], zf[n:m], float(zf[-1]), J


def _newton(chart: ActionChart, t, y, z, eta, tol, maxiter=40, polish=None):
    n = chart.n
    if polish is None:
        polish = 1e-13 * max(1.0, float(np.max(np.abs(z))))
    prev = np.inf
    best = None
    for it in range(maxiter + 1):
        x_end, xi_end, S, J = _evaluate(chart, t, y, eta)
        F = x_end - z
        res = float(np.max(np.abs(F)))
        D = J[:n, n:]
        det = float(np.linalg.det(D))
        if best is None or res < best[0]:
            best = (res, it, eta.copy(), x_end, xi_end, S, J, det)
        if res <= polish or (res <= tol and res >= 0.5 * prev):
            break
        if abs(det) < SINGULAR_DET:
            raise SingularJacobianError(f"|det dx/deta| = {abs(det):.2e} at t={t:.6g}")
        step = np.linalg.solve(D, -F)
        cap = 0.5 * max(1.0, float(np.linalg.norm(eta)))
        norm = float(np.linalg.norm(step))
        if norm > cap:
            step *= cap / norm
        prev = res
        eta = eta + step
    res, it, eta, x_end, xi_end, S, J, det = best
    if not res <= tol:
        raise NoConvergenceError(f"shooting residual {res:.2e} > {tol:.1e} at (t={t:.6g})")
    action = S + float(np.dot(xi_end, z - x_end))
    return ShootingSolution(float(t), y, z, eta, xi_end, x_end, action, res, it, det, J)


def shooting_solve(
    chart: ActionChart,
    t: float,
    y,
    z,
    tol: float = DEFAULT_SHOOT_TOL,
    eta_guess=None,
    max_substeps: int = 16,
    check_window: bool = True,
    polish: Optional[float] = None,
) -> ShootingSolution:
    """Solve x(t; y, eta) = z for eta by Newton's method.

    The iteration is seeded by ``eta_guess`` when given, otherwise by
    continuation along the straight path from the anchor, doubling the number
    of continuation stages until every stage converges. Iteration stops once
    the endpoint residual drops below ``polish`` (default: round-off level).
    Because the returned action carries a first-order endpoint correction,
    its error is quadratic in that residual.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if check_window and not chart.contains(t, y, z):
        raise ValueError(f"(t={t}, y={y}, z={z}) lies outside the chart window")
    if eta_guess is not None:
        try:
            return _newton(chart, t, y, z, np.array(eta_guess, dtype=float), tol, polish=polish)
        except NoConvergenceError:
            pass
    stages = 1
    last_err: Optional[Exception] = None
    while stages <= max_substeps:
        eta = chart.eta0.copy()
        try:
            for k in range(1, stages + 1):
                s = k / stages
                tk = chart.t0 + s * (t - chart.t0)
                yk = chart.y0 + s * (y - chart.y0)
                zk = chart.z0 + s * (z - chart.z0)
                sol = _newton(chart, tk, yk, zk, eta, tol if k == stages else max(tol, 1e-6))
                eta = sol.eta
            return sol
        except NoConvergenceError as err:
            last_err = err
            stages *= 2
    raise NoConvergenceError(f"continuation failed with {max_substeps} stages: {last_err}")


def action_value(chart: ActionChart, t: float, y, z, eta_guess=None, tol: float = DEFAULT_SHOOT_TOL) -> float:
    """S_nu(y, z, t) along the unique connecting segment."""
    return shooting_solve(chart, t, y, z, tol=tol, eta_guess=eta_guess).action


def _central_difference(f, x0: np.ndarray, step: float, richardson: bool) -> np.ndarray:
    grad = np.zeros(x0.size)
    for i in range(x0.size):
        e = np.zeros(x0.size)
        e[i] = 1.0

        def d(hh):
            return (f(x0 + hh * e) - f(x0 - hh * e)) / (2 * hh)

        grad[i] = (4 * d(step / 2) - d(step)) / 3 if richardson else d(step)
    return grad


@dataclass
class GradientReport:
    t: float
    y: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    action: float
    dzS: np.ndarray
    dyS: np.ndarray
    dzS_error: float  # max |d_z S - xi|
    dyS_error: float  # max |d_y S + eta|


def verify_gradients(
    chart: ActionChart,
    t: float,
    y,
    z,
    fd_step: float = DEFAULT_FD_STEP,
    richardson: bool = True,
    eta_guess=None,
) -> GradientReport:
    """Compare finite differences of S with xi(t; y, eta) and -eta."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    base = shooting_solve(chart, t, y, z, eta_guess=eta_guess)
    n = chart.n
    # first-order predictor for eta from the flow Jacobian at the centre
    A = base.jacobian[:n, :n]
    D = base.jacobian[:n, n:]

    def S_of_z(zz):
        guess = base.eta + np.linalg.solve(D, zz - z)
        return shooting_solve(chart, t, y, zz, eta_guess=guess, check_window=False, tol=STENCIL_POLISH, polish=STENCIL_POLISH).action

    def S_of_y(yy):
        guess = base.eta - np.linalg.solve(D, A @ (yy - y))
        return shooting_solve(chart, t, yy, z, eta_guess=guess, check_window=False, tol=STENCIL_POLISH, polish=STENCIL_POLISH).action

    dz = _central_difference(S_of_z, z, fd_step, richardson)
    dy = _central_difference(S_of_y, y, fd_step, richardson)
    return GradientReport(
        t,
        y,
        z,
        base.eta,
        base.xi,
        base.action,
        dz,
        dy,
        float(np.max(np.abs(dz - base.xi))),
        float(np.max(np.abs(dy + base.eta))),
    )


def gradient_grid(
    chart: ActionChart, points: int = 5, shrink: float = 1.0, fd_step: float = DEFAULT_FD_STEP
) -> list:
    """``verify_gradients`` over the tensor grid of the chart window.

    Grid points are visited in order and each shooting problem is seeded with
    the momentum found at the previous point.
    """
    reports = []
    guess = None
    for t, y, z in chart.grid(points, shrink):
        rep = verify_gradients(chart, t, y, z, fd_step=fd_step, eta_guess=guess)
        guess = rep.eta
        reports.append(rep)
    return reports


@dataclass
class StationaryPoint:
    t: float
    y: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    action: float
    dtS: float
    d2tS: float
    shell_residual_start: float
    shell_residual_end: float


@dataclass
class StationaryScan:
    t_grid: np.ndarray
    action: np.ndarray
    dtS: np.ndarray
    energy_excess: np.ndarray  # |xdot|^2/2 + V - lambda along the grid
    points: list
    sign_errors: dict  # max |dtS - s (E - lambda)| for s = +1, -1
    dtS_sign: int


def stationary_time_scan(
    chart: ActionChart,
    y,
    z,
    t_grid: Sequence[float],
    fd_step: float = DEFAULT_FD_STEP,
    d2_step: float = 1e-3,
) -> StationaryScan:
    """Locate zeros of d_t S on a time grid and audit their non-degeneracy.

    d_t S is a central finite difference; each sign change is refined with
    Brent's method. At every zero the energy-shell residual at both ends and
    the second time derivative are recorded. The scan also records which of
    +(E - lambda) or -(E - lambda) the numerical d_t S follows.
    """
    sys = chart.sys
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    ts = np.asarray(t_grid, dtype=float)
    guess = {"eta": None}

    def solve(t):
        sol = shooting_solve(chart, t, y, z, eta_guess=guess["eta"], check_window=False)
        guess["eta"] = sol.eta
        return sol

    def dS(t):
        return (solve(t + fd_step).action - solve(t - fd_step).action) / (2 * fd_step)

    S_vals, dS_vals, excess = [], [], []
    for t in ts:
        sol = solve(t)
        S_vals.append(sol.action)
        excess.append(hamiltonian_value(sys, PhasePoint(y, sol.eta)) - sys.lam)
        dS_vals.append(dS(t))
    S_vals, dS_vals, excess = map(np.array, (S_vals, dS_vals, excess))
    err_plus = float(np.max(np.abs(dS_vals - excess)))
    err_minus = float(np.max(np.abs(dS_vals + excess)))

    points = []
    for i in range(ts.size - 1):
        if dS_vals[i] == 0 or dS_vals[i] * dS_vals[i + 1] < 0:
            t_star = ts[i] if dS_vals[i] == 0 else brentq(dS, ts[i], ts[i + 1], xtol=1e-12, rtol=1e-14)
            sol = solve(t_star)
            s_plus = solve(t_star + d2_step).action
            s_minus = solve(t_star - d2_step).action
            d2 = (s_plus - 2 * sol.action + s_minus) / d2_step**2
            points.append(
                StationaryPoint(
                    float(t_star),
                    y,
                    z,
                    sol.eta,
                    sol.xi,
                    sol.action,
                    dS(t_star),
                    float(d2),
                    abs(hamiltonian_value(sys, PhasePoint(y, sol.eta)) - sys.lam),
                    abs(hamiltonian_value(sys, PhasePoint(z, sol.xi)) - sys.lam),
                )
            )
    if not points:
        raise NoStationaryPointError(f"d_t S keeps one sign on [{ts[0]:.6g}, {ts[-1]:.6g}]")
    return StationaryScan(
        ts, S_vals, dS_vals, excess, points, {"plus": err_plus, "minus": err_minus}, 1 if err_plus < err_minus else -1
    )


def stationary_point_solve(
    chart: ActionChart, y, z, t_guess: Optional[float] = None, eta_guess=None, tol: float = 1e-11, maxiter: int = 40
) -> StationaryPoint:
    """Stationary time for (y, z) via Newton on (t, eta).

    Solves x(t; y, eta) = z together with p(y, eta) = lam, which is the zero
    set of d_t S. The Jacobian blocks come from the variational flow. Use
    ``stationary_time_scan`` to audit the same point by finite differences.
    """
    sys = chart.sys
    n = chart.n
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    t = chart.t0 if t_guess is None else float(t_guess)
    eta = chart.eta0.copy() if eta_guess is None else np.array(eta_guess, dtype=float)
    for _ in range(maxiter):
        x_end, xi_end, S, J = _evaluate(chart, t, y, eta)
        F = np.concatenate([x_end - z, [0.5 * eta @ eta + float(sys.V(y)) - sys.lam]])
        if np.max(np.abs(F)) <= tol:
            break
        M = np.zeros((n + 1, n + 1))
        M[:n, 0] = xi_end
        M[:n, 1:] = J[:n, n:]
        M[n, 1:] = eta
        if abs(np.linalg.det(M)) < SINGULAR_DET:
            raise SingularJacobianError("stationary-point Jacobian is singular")
        step = np.linalg.solve(M, -F)
        t += step[0]
        eta = eta + step[1:]
    else:
        raise NoConvergenceError(f"stationary-point Newton stalled at residual {np.max(np.abs(F)):.2e}")
    action = S + float(np.dot(xi_end, z - x_end))
    return StationaryPoint(
        float(t),
        y,
        z,
        eta,
        xi_end,
        action,
        0.0,
        float("nan"),
        abs(0.5 * eta @ eta + float(sys.V(y)) - sys.lam),
        abs(hamiltonian_value(sys, PhasePoint(z, xi_end)) - sys.lam),
    )


def containment_residual(sys: SystemConfig, sample: RelationSample, tol: float = DEFAULT_TOL) -> float:
    """Distance of a twisted sample from the flow relation of its sign.

    The source (left_x, -left_xi) is flowed for ``sample.t`` and compared with
    the target; energy-shell residuals of both factors are included.
    """
    source = PhasePoint(sample.left_x, -sample.left_xi)
    target = PhasePoint(sample.right_x, sample.right_xi)
    moved = flow_map(sys, source, sample.t, tol=tol)
    gap = float(np.max(np.abs(moved.as_vector() - target.as_vector())))
    shell = max(abs(hamiltonian_value(sys, source) - sys.lam), abs(hamiltonian_value(sys, target) - sys.lam))
    return max(gap, shell)


@dataclass
class PhaseLagrangian:
    samples: list
    residuals: list
    gradients: list

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0


def build_phase_lagrangian(
    chart: ActionChart, stationary: Sequence[StationaryPoint], fd_step: float = DEFAULT_FD_STEP
) -> PhaseLagrangian:
    """Emit (z, y, d_z S, d_y S) at stationary times in the twisted layout.

    The point becomes ``left = (y, d_y S)``, ``right = (z, d_z S)``, which is
    the Lambda^nu convention since d_y S = -eta. Containment is checked by
    flowing (y, -d_y S) for the stationary time.
    """
    sys = chart.sys
    samples, residuals, grads = [], [], []
    for pt in stationary:
        g = verify_gradients(chart, pt.t, pt.y, pt.z, fd_step=fd_step, eta_guess=pt.eta)
        source = PhasePoint(pt.y, -g.dyS)
        target = PhasePoint(pt.z, g.dzS)
        frame = integrate_variational(sys, source, pt.t, tol=chart.flow_tol)
        sample = make_sample(sys, chart.nu, source, target, pt.t, frame.J)
        samples.append(sample)
        residuals.append(containment_residual(sys, sample, tol=chart.flow_tol))
        grads.append(g)
    return PhaseLagrangian(samples, residuals, grads)


def _probe_window(chart: ActionChart) -> bool:
    """True if Newton converges cleanly at every corner of the window."""
    n = chart.n
    anchor_sign = np.sign(chart.anchor_det)
    t_lo, t_hi = chart.t_window
    corners = itertools.product((t_lo, t_hi), *([(0, 1)] * (2 * n)))
    for corner in corners:
        t = corner[0]
        y = np.array([chart.y_box[i, corner[1 + i]] for i in range(n)])
        z = np.array([chart.z_box[i, corner[1 + n + i]] for i in range(n)])
        try:
            sol = shooting_solve(chart, t, y, z, max_substeps=2)
        except (NumericalError, FloatingPointError):
            return False
        if np.sign(sol.det) != anchor_sign or sol.iterations > 12:
            return False
    return True


def build_chart(
    sys: SystemConfig,
    y0,
    eta0,
    t0: float,
    window: Optional[dict] = None,
    caps: Optional[dict] = None,
    flow_tol: float = DEFAULT_TOL,
    start_fraction: float = 1.0 / 16,
) -> ActionChart:
    """Anchor a central-field chart at (t0, y0, eta0).

    With ``window`` given as ``{"t": (lo, hi), "y": [(lo, hi)]*n, "z": [...]}``
    it is used as is. Otherwise the half-widths start at
    ``start_fraction * caps`` and double while Newton converges cleanly at all
    window corners; the last good window is then halved.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    eta0 = np.atleast_1d(np.asarray(eta0, dtype=float))
    if t0 == 0:
        raise SingularJacobianError("the central-field condition always fails at t0 = 0")
    frame = integrate_variational(sys, PhasePoint(y0, eta0), t0, tol=flow_tol)
    det = float(np.linalg.det(frame.dx_deta))
    if abs(det) < SINGULAR_DET:
        raise SingularJacobianError(f"anchor is not in a central field: det dx/deta = {det:.3e}")
    z0 = frame.point.x

    def chart_with(ht, hy, hz):
        return ActionChart(
            sys,
            float(t0),
            y0,
            eta0,
            z0,
            (t0 - ht, t0 + ht),
            np.stack([y0 - hy, y0 + hy], axis=1),
            np.stack([z0 - hz, z0 + hz], axis=1),
            det,
            flow_tol,
        )

    if window is not None:
        y_box = np.asarray(window["y"], dtype=float).reshape(sys.n, 2)
        z_box = np.asarray(window["z"], dtype=float).reshape(sys.n, 2)
        chart = ActionChart(sys, float(t0), y0, eta0, z0, tuple(window["t"]), y_box, z_box, det, flow_tol)
        if not chart.contains(t0, y0, z0):
            raise ValueError("explicit window does not contain the anchor")
        return chart

    caps = dict(caps or {})
    ct = min(caps.get("t", 0.5 * abs(t0)), 0.5 * abs(t0))
    cy = caps.get("y", 0.5)
    cz = caps.get("z", 0.5)
    f = start_fraction
    good = None
    while f <= 1.0 + 1e-12:
        trial = chart_with(f * ct, f * cy, f * cz)
        if not _probe_window(trial):
            break
        good = f
        f *= 2
    if good is None:
        raise NoConvergenceError("no admissible window around the anchor")
    if good < 1.0 or f <= 1.0:
        good /= 2
    return chart_with(good * ct, good * cy, good * cz)
