"""Twisted forward/backward flow relations over the cutoff supports.

A relation point is stored as ``(left; right)`` in T*R^n x T*R^n with the
momentum of the left (source) factor negated:

    sign +1:  (y, -eta; x, xi),  (x, xi) = exp(t H_p)(y, eta), t > 0
    sign -1:  (x, -xi; y, eta),  (y, eta) = exp(t H_p)(x, xi), t < 0

In both cases the left factor lies over supp chi_1 and the right factor over
supp chi_2. All conversions between trajectories and this layout go through
:func:`twist` / :func:`untwist` so the convention lives in one place.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .errors import ConfigError, NoCrossingError
from .flow import DEFAULT_TOL, classify_trapping, solve_flow, symplectic_form
from .hamiltonian import PhasePoint, SystemConfig, energy_shell_sample, hamiltonian_vector_field


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffFunction:
    """Smooth radial bump: 1 on |x - center| <= inner, 0 on |x - center| >= outer."""

    center: tuple
    inner: float
    outer: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not (0 <= self.inner < self.outer):
            raise ConfigError("cutoff radii must satisfy 0 <= inner < outer")

    @property
    def n(self) -> int:
        return len(self.center)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return smooth_step((self.outer - r) / (self.outer - self.inner))

    def in_support(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) < self.outer

    def avoids_ball(self, R0: float) -> bool:
        return float(np.linalg.norm(self.center)) - self.outer >= R0

    def disjoint_from(self, other: "CutoffFunction") -> bool:
        gap = np.linalg.norm(np.asarray(self.center) - np.asarray(other.center))
        return gap >= self.outer + other.outer


def validate_cutoffs(chi1: CutoffFunction, chi2: CutoffFunction, R0: float) -> None:
    for name, chi in (("chi1", chi1), ("chi2", chi2)):
        if not chi.avoids_ball(R0):
            raise ConfigError(f"supp {name} meets B(0, R0)")
    if not chi1.disjoint_from(chi2):
        raise ConfigError("supp chi1 and supp chi2 overlap")


@dataclass(frozen=True)
class RelationSample:
    sign: int
    left_x: np.ndarray
    left_xi: np.ndarray  # already twisted: minus the source momentum
    right_x: np.ndarray
    right_xi: np.ndarray
    t: float
    jacobian: np.ndarray = field(repr=False)
    tangent: np.ndarray = field(repr=False)  # (2n, 4n), rows normalised

    @property
    def n(self) -> int:
        return self.left_x.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.left_x, self.left_xi, self.right_x, self.right_xi])

    @property
    def source(self) -> PhasePoint:
        return untwist(self)[0]

    @property
    def target(self) -> PhasePoint:
        return untwist(self)[1]


def twist(source: PhasePoint, target: PhasePoint):
    """(source, target) -> (left_x, left_xi, right_x, right_xi)."""
    return source.x, -source.xi, target.x, target.xi


def untwist(sample: RelationSample):
    return PhasePoint(sample.left_x, -sample.left_xi), PhasePoint(sample.right_x, sample.right_xi)


def _shell_basis(sys: SystemConfig, p: PhasePoint) -> np.ndarray:
    """Orthonormal basis (rows) of the tangent space of {p = p(source)}."""
    grad = np.concatenate([sys.dV(p.x), p.xi])
    _, _, vt = np.linalg.svd(grad[None, :])
    return vt[1:]


def _normalise(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def relation_tangent(sys: SystemConfig, source: PhasePoint, target: PhasePoint, J: np.ndarray) -> np.ndarray:
    """2n tangent vectors of the twisted relation at (source; target).

    2n - 1 vectors push a basis of the source's energy shell through J;
    the last one moves the flight time.
    """
    n = sys.n
    rows = []
    for d in _shell_basis(sys, source):
        img = J @ d
        rows.append(np.concatenate([d[:n], -d[n:], img[:n], img[n:]]))
    rows.append(np.concatenate([np.zeros(2 * n), hamiltonian_vector_field(sys, target)]))
    return _normalise(np.array(rows))


def graph_tangent(sys: SystemConfig, source: PhasePoint, target: PhasePoint, J: np.ndarray) -> np.ndarray:
    """Same as :func:`relation_tangent` but for the untwisted graph."""
    n = sys.n
    rows = [np.concatenate([d, J @ d]) for d in _shell_basis(sys, source)]
    rows.append(np.concatenate([np.zeros(2 * n), hamiltonian_vector_field(sys, target)]))
    return _normalise(np.array(rows))


def make_sample(sys: SystemConfig, sign: int, source: PhasePoint, target: PhasePoint, t: float, J) -> RelationSample:
    lx, lxi, rx, rxi = twist(source, target)
    return RelationSample(int(sign), lx, lxi, rx, rxi, float(t), np.asarray(J), relation_tangent(sys, source, target, J))


@dataclass
class RelationCloud:
    """Sampled relation plus the seeds that produced no sample."""

    sign: int
    samples: list
    skipped: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def as_array(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, 0))
        return np.array([s.as_vector() for s in self.samples])

    def to_csv(self, path) -> Path:
        """Columns: sign, t, y.., eta.., x.., xi.. with (y, eta) the source point."""
        path = Path(path)
        n = self.samples[0].n if self.samples else 0
        head = ["sign", "t"]
        for name in ("y", "eta", "x", "xi"):
            head += [f"{name}{i + 1}" for i in range(n)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for s in self.samples:
                src, tgt = untwist(s)
                vals = np.concatenate([src.x, src.xi, tgt.x, tgt.xi])
                w.writerow([s.sign, repr(s.t)] + [repr(float(v)) for v in vals])
        return path


def seed_grid(chi: CutoffFunction, n_positions: int = 3, n_directions: int = 8) -> list:
    """Uniform seeds over supp chi times unit directions."""
    c = np.asarray(chi.center)
    n = c.size
    r = chi.outer * (1 - 1e-9)
    offsets = np.linspace(-r, r, n_positions) if n_positions > 1 else np.zeros(1)
    if n == 1:
        positions = [c + np.array([o]) for o in offsets]
        directions = [np.array([1.0]), np.array([-1.0])]
    else:
        mesh = np.stack(np.meshgrid(*([offsets] * n), indexing="ij"), axis=-1).reshape(-1, n)
        positions = [c + o for o in mesh if np.linalg.norm(o) < chi.outer]
        if n == 2:
            a = 2 * np.pi * np.arange(n_directions) / n_directions
            directions = list(np.stack([np.cos(a), np.sin(a)], axis=-1))
        else:
            from .hamiltonian import sphere_points

            directions = list(sphere_points(n, 1.0, n_directions))
    return [(p, d) for p in positions for d in directions]


def _crossing_times(sol, n: int, chi2: CutoffFunction, end: float, per_crossing: int, grid: int):
    c = np.asarray(chi2.center)
    s = np.linspace(0.0, end, grid)
    xs = sol(s)[:n].T
    g = np.linalg.norm(xs - c, axis=1) - chi2.outer

    def gfun(u):
        return np.linalg.norm(sol(u)[:n] - c) - chi2.outer

    def approach(u):
        z = sol(u)
        return float(np.dot(z[:n] - c, z[n : 2 * n]))

    inside = g < 0
    times = []
    i = 0
    while i < grid:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < grid and inside[j + 1]:
            j += 1
        a = s[i] if i == 0 else brentq(gfun, *sorted((s[i - 1], s[i])), xtol=1e-13)
        b = s[j] if j == grid - 1 else brentq(gfun, *sorted((s[j], s[j + 1])), xtol=1e-13)
        lo, hi = min(a, b), max(a, b)
        if per_crossing == 1:
            da, db = approach(lo), approach(hi)
            if da * db < 0:
                times.append(brentq(approach, lo, hi, xtol=1e-14, rtol=1e-14))
            else:
                times.append(lo if abs(gfun(lo)) > abs(gfun(hi)) else hi)
        else:
            times.extend(lo + (hi - lo) * (np.arange(per_crossing) + 0.5) / per_crossing)
        i = j + 1
    return times


def build_relation(
    sys: SystemConfig,
    sign: int,
    chi1: CutoffFunction,
    chi2: CutoffFunction,
    seeds: Iterable,
    t_max: float,
    samples_per_crossing: int = 1,
    tol: float = DEFAULT_TOL,
    strict: bool = False,
    grid: int = 2001,
) -> RelationCloud:
    """Sample the twisted relation of the given sign.

    Each seed ``(y, direction)`` with y in supp chi1 is lifted to the energy
    shell and flowed for ``sign * t_max``. Every pass through supp chi2
    produces one sample at the point of closest approach to chi2's centre
    (or ``samples_per_crossing`` evenly spaced samples). Seeds that never
    reach supp chi2 are listed in ``skipped``; with ``strict=True`` they
    raise ``NoCrossingError`` instead.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    validate_cutoffs(chi1, chi2, sys.R0)
    n = sys.n
    m = 2 * n
    cloud = RelationCloud(sign, [])
    for y, direction in seeds:
        source = energy_shell_sample(sys, y, direction)
        res = solve_flow(sys, source, sign * t_max, jacobian=True, dense=True, tol=tol)
        times = _crossing_times(res.sol, n, chi2, sign * t_max, samples_per_crossing, grid)
        if not times:
            if strict:
                raise NoCrossingError(f"seed {np.ravel(y)} / {np.ravel(direction)} never meets supp chi2")
            cloud.skipped.append(((np.atleast_1d(y), np.atleast_1d(direction)), "no_crossing"))
            continue
        for t in times:
            z = res.sol(t)
            target = PhasePoint.from_vector(z[:m])
            J = z[m : m + m * m].reshape(m, m)
            cloud.samples.append(make_sample(sys, sign, source, target, t, J))
    return cloud


def product_form(n: int, twisted: bool = True) -> np.ndarray:
    """omega (+) omega on the twisted layout, omega (-) omega on a plain graph."""
    om = symplectic_form(n)
    out = np.zeros((4 * n, 4 * n))
    out[: 2 * n, : 2 * n] = om
    out[2 * n :, 2 * n :] = om if twisted else -om
    return out


def lagrangian_residual(samples, twisted: bool = True) -> float:
    """max |sigma(u, v)| over samples and pairs of (unit) tangent vectors."""
    worst = 0.0
    for s in samples:
        T = s.tangent if hasattr(s, "tangent") else np.asarray(s)
        n = T.shape[1] // 4
        gram = T @ product_form(n, twisted) @ T.T
        worst = max(worst, float(np.max(np.abs(gram))))
    return worst


def corrupt_sample(sys: SystemConfig, sample: RelationSample, delta_eta) -> RelationSample:
    """Negative control: shift the source momentum off the energy shell.

    The stored Jacobian and target are kept, so the rebuilt tangent frame no
    longer comes from a single level set of p.
    """
    src, tgt = untwist(sample)
    bad = PhasePoint(src.x, src.xi + np.asarray(delta_eta, dtype=float))
    lx, lxi, rx, rxi = twist(bad, tgt)
    return replace(sample, left_x=lx, left_xi=lxi, tangent=relation_tangent(sys, bad, tgt, sample.jacobian))


def reflect(sample: RelationSample) -> RelationSample:
    """W_- reflection: (y, -eta; x, xi) -> (x, -xi; y, eta)."""
    n = sample.n
    om = symplectic_form(n)
    J_inv = -om @ sample.jacobian.T @ om
    T = sample.tangent
    T_new = np.concatenate([T[:, 2 * n : 3 * n], -T[:, 3 * n :], T[:, :n], -T[:, n : 2 * n]], axis=1)
    return RelationSample(
        -sample.sign,
        sample.right_x.copy(),
        -sample.right_xi,
        sample.left_x.copy(),
        -sample.left_xi,
        -sample.t,
        J_inv,
        T_new,
    )


def check_disjointness(plus, minus) -> float:
    """Minimum Euclidean distance between two relation clouds in R^{4n}."""
    a = np.array([s.as_vector() for s in plus]) if len(plus) else np.zeros((0, 0))
    b = np.array([s.as_vector() for s in minus]) if len(minus) else np.zeros((0, 0))
    if a.size == 0 or b.size == 0:
        return float("inf")
    d, _ = cKDTree(b).query(a, k=1)
    return float(np.min(d))


@dataclass
class NonTrappedWindow:
    samples: list
    lower: np.ndarray  # bounding box in R^{4n}
    upper: np.ndarray
    verdicts: list

    def __len__(self):
        return len(self.samples)


def certify_window(sys: SystemConfig, samples: Sequence, horizon: float, tol: float = DEFAULT_TOL) -> NonTrappedWindow:
    """Keep samples whose right-factor trajectory is certified non-trapped."""
    kept, verdicts = [], []
    for s in samples:
        v = classify_trapping(sys, untwist(s)[1], horizon, tol=tol)
        verdicts.append(v)
        if v.non_trapped:
            kept.append(s)
    if kept:
        arr = np.array([s.as_vector() for s in kept])
        lower, upper = arr.min(axis=0), arr.max(axis=0)
    else:
        lower = upper = np.zeros(0)
    return NonTrappedWindow(kept, lower, upper, verdicts)
