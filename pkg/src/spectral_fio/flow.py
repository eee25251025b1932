"""Hamiltonian flow exp(t H_p), its variational equations and trapping tests."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import StepFailure
from .hamiltonian import PhasePoint, SystemConfig, hamiltonian_value

DEFAULT_TOL = 1e-10
# DOP853 refuses rtol below 100 * machine epsilon
_MIN_RTOL = 2.3e-14


def _rtol_for(tol: float) -> float:
    return max(tol * 1e-2, _MIN_RTOL)


def symplectic_form(n: int) -> np.ndarray:
    """Omega = [[0, I], [-I, 0]] on R^{2n} ordered as (x, xi)."""
    om = np.zeros((2 * n, 2 * n))
    om[:n, n:] = np.eye(n)
    om[n:, :n] = -np.eye(n)
    return om


def _make_rhs_1d(sys: SystemConfig, jacobian: bool, action: bool):
    """Scalar right-hand side for n = 1; the state layout matches ``_make_rhs``."""
    lam = sys.lam
    jet = sys.potential.scalar_jet

    def rhs(t, z):
        x, xi = z[0], z[1]
        v, g, H = jet(float(x))
        out = [xi, -g]
        if jacobian:
            # rows of J: (dx/dx0, dx/dxi0), (dxi/dx0, dxi/dxi0)
            out += [z[4], z[5], -H * z[2], -H * z[3]]
        if action:
            out.append(0.5 * xi * xi - v + lam)
        return np.array(out)

    return rhs


def _make_rhs(sys: SystemConfig, jacobian: bool, action: bool):
    if sys.n == 1:
        return _make_rhs_1d(sys, jacobian, action)
    return _make_rhs_nd(sys, jacobian, action)


def _make_rhs_nd(sys: SystemConfig, jacobian: bool, action: bool):
    n = sys.n
    m = 2 * n
    lam = sys.lam
    pot = sys.potential

    def rhs(t, z):
        x = z[:n]
        xi = z[n:m]
        out = np.empty_like(z)
        out[:n] = xi
        if jacobian or action:
            v, g, H = pot.jet(x)
        else:
            g = pot.gradient(x)
        out[n:m] = -g
        k = m
        if jacobian:
            J = z[m : m + m * m].reshape(m, m)
            dJ = np.empty((m, m))
            dJ[:n] = J[n:]
            dJ[n:] = -H @ J[:n]
            out[m : m + m * m] = dJ.ravel()
            k = m + m * m
        if action:
            out[k] = 0.5 * np.dot(xi, xi) - v + lam
        return out

    return rhs


def _initial_state(start: PhasePoint, jacobian: bool, action: bool) -> np.ndarray:
    parts = [start.as_vector()]
    if jacobian:
        parts.append(np.eye(2 * start.n).ravel())
    if action:
        parts.append(np.zeros(1))
    return np.concatenate(parts)


def solve_flow(
    sys: SystemConfig,
    start: PhasePoint,
    t_end: float,
    *,
    jacobian: bool = False,
    action: bool = False,
    dense: bool = False,
    tol: float = DEFAULT_TOL,
    t_eval=None,
):
    """Integrate the (optionally augmented) flow from time 0 to ``t_end``.

    The state is ``(x, xi[, J.ravel()][, S])`` where ``J`` is the 2n x 2n
    Jacobian of the flow map and ``S`` accumulates the Lagrangian of p - lambda.
    Returns scipy's OdeResult.
    """
    z0 = _initial_state(start, jacobian, action)
    if t_end == 0:
        return SimpleNamespace(t=np.zeros(1), y=z0[:, None], sol=None, status=0)
    rtol = _rtol_for(tol)
    res = solve_ivp(
        _make_rhs(sys, jacobian, action),
        (0.0, float(t_end)),
        z0,
        method="DOP853",
        rtol=rtol,
        atol=rtol,
        dense_output=dense,
        t_eval=t_eval,
    )
    if res.status < 0:
        raise StepFailure(res.message, last_time=float(res.t[-1]), last_state=res.y[:, -1].copy())
    return res


@dataclass
class Trajectory:
    """Integral curve of H_p sampled at the integrator's knots."""

    initial: PhasePoint
    times: np.ndarray
    states: np.ndarray  # (len(times), 2n)
    energy: float
    max_drift: float
    tol: float
    potential: object = field(default=None, repr=False)
    _pieces: list = field(default_factory=list, repr=False)

    @property
    def knots(self) -> list:
        return [(float(t), PhasePoint.from_vector(s)) for t, s in zip(self.times, self.states)]

    def state(self, t) -> np.ndarray:
        """Dense-output state at scalar or array time(s)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        n2 = self.states.shape[1]
        out = np.empty((t_arr.size, n2))
        for i, s in enumerate(t_arr):
            out[i] = self._eval(s)
        return out[0] if np.ndim(t) == 0 else out

    def _eval(self, s: float) -> np.ndarray:
        if s == 0 or not self._pieces:
            if s != 0:
                raise ValueError("trajectory has no dense output")
            return self.initial.as_vector()
        for lo, hi, sol in self._pieces:
            if lo - 1e-12 <= s <= hi + 1e-12:
                return sol(s)[: self.states.shape[1]]
        raise ValueError(f"time {s} outside the integrated span")

    def point(self, t: float) -> PhasePoint:
        return PhasePoint.from_vector(self.state(t))

    def energy_drift(self) -> np.ndarray:
        n = self.initial.n
        x, xi = self.states[:, :n], self.states[:, n:]
        return np.abs(0.5 * np.sum(xi * xi, axis=1) + self.potential.value(x) - self.energy)

    def to_csv(self, path) -> Path:
        """Columns: t, x_1..x_n, xi_1..xi_n, energy_drift."""
        path = Path(path)
        n = self.initial.n
        drift = self.energy_drift()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"xi{i + 1}" for i in range(n)] + ["energy_drift"])
            for t, s, d in zip(self.times, self.states, drift):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in s] + [repr(float(d))])
        return path


def integrate_trajectory(
    sys: SystemConfig, start: PhasePoint, t_span=(0.0, 1.0), tol: float = DEFAULT_TOL
) -> Trajectory:
    """Dense-output trajectory over ``t_span`` (which must contain 0).

    Negative times integrate the backward flow. Raises ``StepFailure`` if the
    integrator fails or the energy drift exceeds ``tol``.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (t0 <= 0 <= t1):
        raise ValueError("t_span must contain 0")
    if tol <= 0:
        raise ValueError("tol must be positive")
    pieces, times, states = [], [np.zeros(1)], [start.as_vector()[None, :]]
    for end in (t1, t0):
        if end == 0:
            continue
        res = solve_flow(sys, start, end, dense=True, tol=tol)
        pieces.append((min(0.0, end), max(0.0, end), res.sol))
        times.append(res.t[1:])
        states.append(res.y[:, 1:].T)
    times = np.concatenate(times)
    states = np.concatenate(states)
    order = np.argsort(times, kind="stable")
    energy = hamiltonian_value(sys, start)
    traj = Trajectory(start, times[order], states[order], energy, 0.0, tol, sys.potential, pieces)
    drift = traj.energy_drift()
    traj.max_drift = float(drift.max())
    if traj.max_drift > tol:
        i = int(np.argmax(drift))
        raise StepFailure(
            f"energy drift {traj.max_drift:.3e} exceeds tol {tol:.1e}",
            last_time=float(traj.times[i]),
            last_state=traj.states[i].copy(),
        )
    return traj


@dataclass
class VariationalFrame:
    """Flow Jacobian J = d(x(t), xi(t)) / d(x0, xi0) at time t."""

    t: float
    J: np.ndarray
    point: PhasePoint

    @property
    def n(self) -> int:
        return self.J.shape[0] // 2

    @property
    def dx_deta(self) -> np.ndarray:
        n = self.n
        return self.J[:n, n:]

    def symplectic_residual(self) -> float:
        om = symplectic_form(self.n)
        return float(np.max(np.abs(self.J.T @ om @ self.J - om)))

    def det(self) -> float:
        return float(np.linalg.det(self.J))


def integrate_variational(
    sys: SystemConfig, start: PhasePoint, t: float, tol: float = DEFAULT_TOL
) -> VariationalFrame:
    """Integrate the base trajectory and its Jacobian jointly up to time ``t``."""
    n = sys.n
    m = 2 * n
    if t == 0:
        return VariationalFrame(0.0, np.eye(m), start)
    res = solve_flow(sys, start, t, jacobian=True, tol=tol)
    z = res.y[:, -1]
    return VariationalFrame(float(t), z[m : m + m * m].reshape(m, m).copy(), PhasePoint.from_vector(z[:m]))


def flow_map(sys: SystemConfig, p0: PhasePoint, t: float, tol: float = DEFAULT_TOL) -> PhasePoint:
    """exp(t H_p)(p0)."""
    if t == 0:
        return p0
    res = solve_flow(sys, p0, t, tol=tol)
    return PhasePoint.from_vector(res.y[:, -1])


@dataclass
class TrappingVerdict:
    """``verdict`` is 'non_trapped' (with ``t0``) or 'undecided' (with ``horizon``)."""

    verdict: str
    t0: Optional[float]
    horizon: float
    escape: dict

    @property
    def non_trapped(self) -> bool:
        return self.verdict == "non_trapped"


def _outgoing_certified(sys: SystemConfig, z: np.ndarray, direction: int, tail_fraction: float) -> bool:
    n = sys.n
    x, xi = z[:n], z[n:]
    r = np.linalg.norm(x)
    if r <= sys.R0:
        return False
    radial = float(np.dot(x, xi)) * direction
    if radial <= 0:
        return False
    # d/dt (x . xi) = |xi|^2 - x . grad V stays positive when the tail is weak
    v = float(sys.V(x))
    virial = float(np.dot(x, sys.dV(x)))
    return abs(v) + abs(virial) < tail_fraction * sys.lam


def _last_inside_time(sol, n: int, R0: float, end: float, samples: int) -> float:
    s = np.linspace(0.0, end, samples)
    radius = np.linalg.norm(sol(s)[:n].T, axis=1)
    inside = np.nonzero(radius <= R0)[0]
    if inside.size == 0:
        return 0.0
    i = inside[-1]
    if i == samples - 1:
        return abs(end)

    def g(u):
        return np.linalg.norm(sol(u)[:n]) - R0

    return abs(brentq(g, s[i], s[i + 1], xtol=1e-14, rtol=1e-14))


def classify_trapping(
    sys: SystemConfig,
    start: PhasePoint,
    horizon: float,
    tol: float = DEFAULT_TOL,
    samples: int = 4001,
    tail_fraction: float = 0.5,
) -> TrappingVerdict:
    """Certify non-trapping up to ``horizon`` with an outgoing-escape test.

    ``t0`` is the last time (in either direction) at which the trajectory is
    inside the closed ball of radius R0. The verdict is non_trapped only if,
    at both ends of the horizon, the trajectory is outside the ball, moving
    outward, and the potential tail there is weak enough that the radial
    velocity keeps growing.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = sys.n
    escape = {}
    t_last = 0.0
    ok = True
    for direction in (1, -1):
        res = solve_flow(sys, start, direction * horizon, dense=True, tol=tol)
        z_end = res.y[:, -1]
        key = "forward" if direction > 0 else "backward"
        escape[f"{key}_radius"] = float(np.linalg.norm(z_end[:n]))
        t_in = _last_inside_time(res.sol, n, sys.R0, direction * horizon, samples)
        escape[f"{key}_last_inside"] = t_in
        t_last = max(t_last, t_in)
        ok = ok and t_in < horizon and _outgoing_certified(sys, z_end, direction, tail_fraction)
    if ok:
        return TrappingVerdict("non_trapped", t_last, horizon, escape)
    return TrappingVerdict("undecided", None, horizon, escape)


@dataclass
class EnergyTrappingScan:
    """Outcome of classifying shell points over the interaction ball."""

    non_trapping: bool
    checked: int
    undecided: list  # PhasePoints whose verdict was not non_trapped


def scan_energy_trapping(
    sys: SystemConfig, horizon: float, positions: int = 21, directions: int = 8, tol: float = DEFAULT_TOL
) -> EnergyTrappingScan:
    """Sample Sigma_lambda over the closed ball and classify every sample.

    The energy is reported non-trapping only if every sample escapes in both
    time directions within ``horizon``.
    """
    from .hamiltonian import energy_shell_sample, sphere_points

    n = sys.n
    axis = np.linspace(-sys.R0, sys.R0, positions)
    grid = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    grid = grid[np.linalg.norm(grid, axis=1) <= sys.R0]
    dirs = sphere_points(n, 1.0, directions)
    undecided, checked = [], 0
    for x in grid:
        if sys.V(x) >= sys.lam:
            continue
        for d in dirs:
            p = energy_shell_sample(sys, x, d)
            checked += 1
            if not classify_trapping(sys, p, horizon, tol=tol, samples=1001).non_trapped:
                undecided.append(p)
    return EnergyTrappingScan(not undecided, checked, undecided)
