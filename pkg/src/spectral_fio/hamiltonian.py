"""Classical system: potential, Hamiltonian, vector field, Lagrangian.

The metric is the Euclidean one, so the principal symbol is
``p(x, xi) = |xi|^2 / 2 + V(x)``. Potentials come from closed-form families
whose first and second derivatives are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ForbiddenRegionError

POTENTIAL_KINDS = ("zero", "gaussian_bumps", "radial_tail")


@dataclass(frozen=True)
class PotentialModel:
    """Smooth potential from one of three closed-form families.

    ``gaussian_bumps``: ``V(x) = sum_k a_k exp(-|x - c_k|^2 / w_k^2)``.
    ``radial_tail``: ``V(x) = coefficient * (1 + |x|^2)^(-exponent / 2)``;
    ``exponent = 0`` gives a constant potential.
    """

    kind: str = "zero"
    centers: tuple = ()
    amplitudes: tuple = ()
    widths: tuple = ()
    coefficient: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if self.kind == "gaussian_bumps":
            m = len(self.amplitudes)
            if len(self.centers) != m or len(self.widths) != m:
                raise ConfigError("gaussian_bumps needs matching centers/amplitudes/widths")
            if any(w <= 0 for w in self.widths):
                raise ConfigError("bump widths must be positive")
            # store centers as nested tuples so the model stays hashable
            object.__setattr__(
                self, "centers", tuple(tuple(float(c) for c in np.atleast_1d(ctr)) for ctr in self.centers)
            )
            object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
            object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))
        if self.kind == "radial_tail" and self.exponent < 0:
            raise ConfigError("radial_tail exponent must be >= 0")

    @classmethod
    def zero(cls) -> "PotentialModel":
        return cls("zero")

    @classmethod
    def gaussian(cls, centers, amplitudes, widths) -> "PotentialModel":
        return cls("gaussian_bumps", centers=tuple(centers), amplitudes=tuple(amplitudes), widths=tuple(widths))

    @classmethod
    def radial(cls, coefficient: float, exponent: float) -> "PotentialModel":
        return cls("radial_tail", coefficient=float(coefficient), exponent=float(exponent))

    def _check_dim(self, n: int):
        if self.kind == "gaussian_bumps":
            for c in self.centers:
                if len(c) != n:
                    raise ConfigError(f"bump center {c} does not live in R^{n}")

    def value(self, x) -> np.ndarray:
        """V at points ``x`` of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros(x.shape[:-1])
        if self.kind == "gaussian_bumps":
            out = np.zeros(x.shape[:-1])
            for c, a, w in zip(self.centers, self.amplitudes, self.widths):
                d = x - np.asarray(c)
                out = out + a * np.exp(-np.sum(d * d, axis=-1) / w**2)
            return out
        r2 = np.sum(x * x, axis=-1)
        return self.coefficient * (1.0 + r2) ** (-0.5 * self.exponent)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "gaussian_bumps":
            out = np.zeros_like(x)
            for c, a, w in zip(self.centers, self.amplitudes, self.widths):
                d = x - np.asarray(c)
                e = a * np.exp(-np.sum(d * d, axis=-1) / w**2)
                out = out - (2.0 / w**2) * e[..., None] * d
            return out
        s = self.exponent
        r2 = np.sum(x * x, axis=-1)
        return (-self.coefficient * s * (1.0 + r2) ** (-0.5 * s - 1.0))[..., None] * x

    def jet(self, x: np.ndarray):
        """(V, grad V, Hess V) at a single point, sharing the exponentials."""
        x = np.asarray(x, dtype=float)
        n = x.size
        if self.kind == "gaussian_bumps":
            c, a, w2, eye = self._bump_arrays(n)
            d = x - c
            e = a * np.exp(-(d * d).sum(axis=1) / w2)
            ew = e / w2
            g = -2.0 * (ew @ d)
            H = (d.T * (4.0 * ew / w2)) @ d - (2.0 * ew.sum()) * eye
            return float(e.sum()), g, H
        return float(self.value(x)), self.gradient(x), self.hessian(x)

    def scalar_jet(self, x: float) -> tuple:
        """(V, V', V'') at a point of the line, in plain floats.

        Same values as ``jet`` for n = 1 without the small-array overhead,
        which dominates when the flow is integrated many times.
        """
        if self.kind == "zero":
            return 0.0, 0.0, 0.0
        if self.kind == "gaussian_bumps":
            v = g = H = 0.0
            for c, a, w in zip(self.centers, self.amplitudes, self.widths):
                d = x - c[0]
                w2 = w * w
                e = a * math.exp(-d * d / w2)
                v += e
                g -= 2.0 * d * e / w2
                H += e * (4.0 * d * d / w2 - 2.0) / w2
            return v, g, H
        s = self.exponent
        q = 1.0 + x * x
        base = -self.coefficient * s * q ** (-0.5 * s - 1.0)
        return self.coefficient * q ** (-0.5 * s), base * x, base * (1.0 - (s + 2.0) * x * x / q)

    def _bump_arrays(self, n: int):
        cache = self.__dict__.get("_arrays")
        if cache is None:
            cache = (
                np.array(self.centers, dtype=float),
                np.array(self.amplitudes, dtype=float),
                np.array(self.widths, dtype=float) ** 2,
                np.eye(n),
            )
            object.__setattr__(self, "_arrays", cache)
        return cache

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        eye = np.eye(n)
        if self.kind == "zero":
            return np.zeros(x.shape + (n,))
        if self.kind == "gaussian_bumps":
            out = np.zeros(x.shape + (n,))
            for c, a, w in zip(self.centers, self.amplitudes, self.widths):
                d = x - np.asarray(c)
                e = a * np.exp(-np.sum(d * d, axis=-1) / w**2)
                outer = d[..., :, None] * d[..., None, :]
                out = out + e[..., None, None] * (4.0 * outer / w**4 - 2.0 * eye / w**2)
            return out
        s = self.exponent
        r2 = np.sum(x * x, axis=-1)
        base = -self.coefficient * s * (1.0 + r2) ** (-0.5 * s - 1.0)
        outer = x[..., :, None] * x[..., None, :]
        return base[..., None, None] * (eye - (s + 2.0) * outer / (1.0 + r2)[..., None, None])


@dataclass(frozen=True)
class SystemConfig:
    """Dimension, interaction radius, energy, potential and h-ladder."""

    n: int
    R0: float
    lam: float
    potential: PotentialModel = field(default_factory=PotentialModel)
    mu: float = 1.0
    h_ladder: tuple = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7)

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and 1 <= self.n <= 3):
            raise ConfigError(f"dimension n must be an integer in 1..3, got {self.n!r}")
        if self.R0 <= 0:
            raise ConfigError("R0 must be positive")
        if self.lam <= 0:
            raise ConfigError("energy lambda must be positive")
        if self.mu <= 0:
            raise ConfigError("decay exponent mu must be positive")
        hs = tuple(float(h) for h in self.h_ladder)
        if any(not (0 < h <= 1) for h in hs):
            raise ConfigError("every h must lie in (0, 1]")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("h_ladder must be strictly decreasing")
        object.__setattr__(self, "h_ladder", hs)
        self.potential._check_dim(self.n)

    def V(self, x):
        return self.potential.value(x)

    def dV(self, x):
        return self.potential.gradient(x)

    def d2V(self, x):
        return self.potential.hessian(x)


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, xi) of T*R^n."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if x.shape != xi.shape or x.ndim != 1:
            raise ValueError("x and xi must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self) -> int:
        return self.x.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])

    @classmethod
    def from_vector(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n], z[n:])


def hamiltonian_value(sys: SystemConfig, p: PhasePoint) -> float:
    """p(x, xi) = |xi|^2 / 2 + V(x)."""
    return float(0.5 * np.dot(p.xi, p.xi) + sys.V(p.x))


def hamiltonian_vector_field(sys: SystemConfig, p: PhasePoint) -> np.ndarray:
    """H_p = (d_xi p, -d_x p) = (xi, -grad V(x)) as a flat 2n-vector."""
    return np.concatenate([p.xi, -sys.dV(p.x)])


def lagrangian_value(sys: SystemConfig, xdot, x) -> float:
    """L(xdot, x) = |xdot|^2 / 2 - V(x) + lambda, the Lagrangian of p - lambda."""
    xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(0.5 * np.dot(xdot, xdot) - sys.V(x) + sys.lam)


def energy_shell_sample(sys: SystemConfig, x, direction) -> PhasePoint:
    """Lift a position and a direction to the energy shell p = lambda."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("direction must be non-zero")
    kinetic = sys.lam - float(sys.V(x))
    if kinetic <= 0:
        raise ForbiddenRegionError(f"V(x) = {sys.lam - kinetic:.6g} >= lambda = {sys.lam:.6g}")
    return PhasePoint(x, np.sqrt(2.0 * kinetic) * d / norm)


def sphere_points(n: int, radius: float, count: int = 64) -> np.ndarray:
    """Deterministic sample of the sphere |x| = radius in R^n."""
    if n == 1:
        return np.array([[radius], [-radius]])
    if n == 2:
        a = 2 * np.pi * np.arange(count) / count
        return radius * np.stack([np.cos(a), np.sin(a)], axis=-1)
    # Fibonacci lattice
    k = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * k / count)
    theta = np.pi * (1 + 5**0.5) * k
    return radius * np.stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1
    )


@dataclass
class DecayReport:
    radii: np.ndarray
    sup_values: np.ndarray  # shape (3, len(radii)): orders 0, 1, 2
    ratios: np.ndarray  # sup |d^a V| (1 + r)^(mu + |a|)
    constants: np.ndarray  # fitted C_a, one per order
    passed: bool


def validate_decay(sys: SystemConfig, sample_radii: Sequence[float], rel_slack: float = 1e-9) -> DecayReport:
    """Check |d^a V| <= C_a (1 + |x|)^(-mu - |a|) on sampled spheres, |a| <= 2.

    The bound is accepted when, for every order, the weighted sup
    ``sup |d^a V| (1 + r)^(mu + |a|)`` is non-increasing over the sorted radii.
    """
    radii = np.sort(np.asarray(sample_radii, dtype=float))
    if np.any(radii <= sys.R0):
        raise ValueError("sample radii must exceed R0")
    sups = np.zeros((3, radii.size))
    for i, r in enumerate(radii):
        pts = sphere_points(sys.n, r)
        sups[0, i] = np.max(np.abs(sys.V(pts)))
        sups[1, i] = np.max(np.abs(sys.dV(pts)))
        sups[2, i] = np.max(np.abs(sys.d2V(pts)))
    weights = np.stack([(1.0 + radii) ** (sys.mu + a) for a in range(3)])
    ratios = sups * weights
    constants = ratios.max(axis=1)
    passed = True
    for a in range(3):
        row = ratios[a]
        if np.all(row == 0):
            continue
        if np.any(np.diff(row) > rel_slack * row[:-1]):
            passed = False
    return DecayReport(radii, sups, ratios, constants, passed)
