"""Finite-difference reference for P(h) = h^2 (-Laplacian) / 2 + V on a box.

Eigenpairs near the energy, mollified spectral functions, resolvent solves,
weighted resolvent norms and the finite-epsilon Stone identity

    R(lam + i eps) - R(lam - i eps) = 2 pi i sum_j L_eps(lam_j - lam) v_j v_j^T,

with the Lorentzian ``L_eps(s) = (eps / pi) / (s^2 + eps^2)``. Eigenvectors are
l2-normalised on the grid, so continuum kernels carry a factor 1 / dx^n.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import __version__
from .errors import ConfigError, ResolutionError, SolverFailure, WindowEmptyError
from .hamiltonian import SystemConfig

BOUNDARY_CONDITIONS = ("dirichlet", "periodic")
DENSE_LIMIT = 6000


def max_spacing(h: float, lam: float) -> float:
    """Largest admissible grid spacing: a quarter of h / sqrt(2 lam)."""
    return h / (4.0 * np.sqrt(2.0 * lam))


@dataclass(frozen=True)
class GridDiscretization:
    """Uniform grid on [-L, L]^n with ``points`` unknowns per axis.

    Dirichlet nodes are ``-L + j dx`` for ``j = 1..points`` with
    ``dx = 2L / (points + 1)``; periodic nodes are ``-L + j dx`` for
    ``j = 0..points-1`` with ``dx = 2L / points``.
    """

    n: int
    L: float
    points: int
    bc: str
    h: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigError("grids are available for n = 1 and n = 2 only")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ConfigError(f"unknown boundary condition {self.bc!r}")
        if self.L <= 0 or self.points < 3 or self.h <= 0:
            raise ConfigError("grid needs L > 0, points >= 3 and h > 0")

    @property
    def dx(self) -> float:
        return 2 * self.L / (self.points + 1 if self.bc == "dirichlet" else self.points)

    @property
    def size(self) -> int:
        return self.points**self.n

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.n

    def axis(self) -> np.ndarray:
        j = np.arange(1, self.points + 1) if self.bc == "dirichlet" else np.arange(self.points)
        return -self.L + j * self.dx

    def coordinates(self) -> np.ndarray:
        """All nodes as an (N, n) array in C order."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def check_resolution(self, lam: float):
        limit = max_spacing(self.h, lam)
        if self.dx > limit * (1 + 1e-12):
            raise ResolutionError(f"dx = {self.dx:.4g} exceeds h / (4 sqrt(2 lam)) = {limit:.4g}")

    def check_contains(self, R0: float, cutoffs: Sequence = ()):
        """Ball B(0, R0) and every cutoff support must sit strictly inside the box."""
        reach = [R0] + [float(np.max(np.abs(c.center)) + c.outer) for c in cutoffs]
        if max(reach) >= self.L:
            raise ConfigError(f"box half-width {self.L} does not contain the ball and cutoff supports")

    def describe(self) -> dict:
        return asdict(self)


def make_discretization(
    sys: SystemConfig, h: float, L: float, spacing: Optional[float] = None, bc: str = "dirichlet"
) -> GridDiscretization:
    """Grid with spacing at most ``spacing`` (default: the resolution limit)."""
    spacing = max_spacing(h, sys.lam) if spacing is None else spacing
    intervals = int(np.ceil(2 * L / spacing - 1e-9))
    points = intervals - 1 if bc == "dirichlet" else intervals
    disc = GridDiscretization(sys.n, float(L), points, bc, float(h))
    disc.check_resolution(sys.lam)
    return disc


def _laplacian_1d(points: int, dx: float, bc: str) -> sp.csr_matrix:
    """Nonnegative second difference -D^2."""
    main = 2.0 * np.ones(points)
    off = -np.ones(points - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc == "periodic":
        lap[0, points - 1] = -1.0
        lap[points - 1, 0] = -1.0
    return lap.tocsr() / dx**2


def assemble_operator(disc: GridDiscretization, sys: SystemConfig) -> sp.csr_matrix:
    """Sparse symmetric matrix of h^2 (-Laplacian) / 2 + V."""
    if sys.n != disc.n:
        raise ConfigError("grid and system dimensions differ")
    disc.check_resolution(sys.lam)
    lap1 = _laplacian_1d(disc.points, disc.dx, disc.bc)
    if disc.n == 1:
        lap = lap1
    else:
        eye = sp.identity(disc.points, format="csr")
        lap = sp.kron(lap1, eye, format="csr") + sp.kron(eye, lap1, format="csr")
    V = sys.V(disc.coordinates())
    return (0.5 * disc.h**2 * lap + sp.diags(V)).tocsr()


@dataclass
class SpectralWindow:
    """Eigenpairs of P with eigenvalues in [lam - delta, lam + delta]."""

    lam: float
    delta: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (N, k), l2-normalised columns
    dx: float
    n: int
    residual: float = 0.0
    orthonormality: float = 0.0

    @property
    def count(self) -> int:
        return self.eigenvalues.size


def _window_quality(P, vals, vecs):
    if vals.size == 0:
        return 0.0, 0.0
    res = np.max(np.abs(P @ vecs - vecs * vals))
    gram = vecs.T @ vecs
    return float(res), float(np.max(np.abs(gram - np.eye(vals.size))))


def _content_key(disc: GridDiscretization, sys: SystemConfig, extra: dict) -> str:
    payload = json.dumps(
        {"grid": disc.describe(), "system": repr(sys), "extra": extra, "version": __version__}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


class EigenCache:
    """On-disk store of eigen-decompositions: ``<key>.npz`` plus ``<key>.json``.

    Writes go through a temporary file and an atomic rename, so concurrent
    readers never see partial files.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def _paths(self, key):
        return self.directory / f"{key}.npz", self.directory / f"{key}.json"

    def load(self, key):
        npz, meta = self._paths(key)
        if not (npz.exists() and meta.exists()):
            return None
        with np.load(npz) as data:
            return data["eigenvalues"], data["eigenvectors"]

    def store(self, key, values, vectors, metadata: dict):
        self.directory.mkdir(parents=True, exist_ok=True)
        npz, meta = self._paths(key)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".npz")
        os.close(fd)
        np.savez(tmp, eigenvalues=values, eigenvectors=vectors)
        os.replace(tmp, npz)
        meta_tmp = meta.with_suffix(".json.tmp")
        meta_tmp.write_text(json.dumps({"hash": key, "tool_version": __version__, **metadata}, indent=2))
        os.replace(meta_tmp, meta)

    def clear(self) -> int:
        removed = 0
        if self.directory.exists():
            for p in self.directory.iterdir():
                if p.suffix in (".npz", ".json"):
                    p.unlink()
                    removed += 1
        return removed


def _solve_window(disc, P, lo, hi):
    N = P.shape[0]
    if disc.n == 1 and disc.bc == "dirichlet":
        d = P.diagonal()
        e = P.diagonal(1)
        try:
            return sla.eigh_tridiagonal(d, e, select="v", select_range=(lo, hi))
        except ValueError:
            return np.zeros(0), np.zeros((N, 0))
    if N <= DENSE_LIMIT:
        return sla.eigh(P.toarray(), subset_by_value=(lo, hi))
    # shift-invert Lanczos; widen k until the window is bracketed
    mid = 0.5 * (lo + hi)
    k = 16
    while True:
        k = min(k, N - 2)
        vals, vecs = spla.eigsh(P.tocsc(), k=k, sigma=mid, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        if (vals[0] < lo and vals[-1] > hi) or k >= N - 2:
            keep = (vals >= lo) & (vals <= hi)
            return vals[keep], vecs[:, keep]
        k *= 2


def spectral_window(
    disc: GridDiscretization,
    P,
    lam: float,
    delta: float,
    sys: Optional[SystemConfig] = None,
    cache: Optional[EigenCache] = None,
) -> SpectralWindow:
    """All eigenpairs with eigenvalues in [lam - delta, lam + delta].

    Raises ``WindowEmptyError`` when the window holds no eigenvalue.
    """
    if delta <= 0:
        raise ValueError("window half-width must be positive")
    lo, hi = lam - delta, lam + delta
    key = None
    hit = None
    if cache is not None and sys is not None:
        key = _content_key(disc, sys, {"window": [lo, hi]})
        hit = cache.load(key)
    if hit is not None:
        vals, vecs = hit
    else:
        vals, vecs = _solve_window(disc, P, lo, hi)
        if key is not None:
            cache.store(key, vals, vecs, {"grid": disc.describe(), "window": [lo, hi]})
    if vals.size == 0:
        raise WindowEmptyError(f"no eigenvalue in [{lo:.6g}, {hi:.6g}]")
    res, orth = _window_quality(P, vals, vecs)
    return SpectralWindow(lam, delta, vals, vecs, disc.dx, disc.n, res, orth)


def full_spectrum(disc: GridDiscretization, P) -> tuple:
    """Every eigenpair (tridiagonal or dense solver)."""
    if disc.n == 1 and disc.bc == "dirichlet":
        return sla.eigh_tridiagonal(P.diagonal(), P.diagonal(1))
    if P.shape[0] > DENSE_LIMIT:
        raise ConfigError(f"full spectrum limited to {DENSE_LIMIT} unknowns, got {P.shape[0]}")
    return sla.eigh(P.toarray())


def lorentzian(s, eps: float):
    return (eps / np.pi) / (np.asarray(s) ** 2 + eps**2)


def gaussian_mollifier(s, delta: float):
    return np.exp(-0.5 * (np.asarray(s) / delta) ** 2) / (np.sqrt(2 * np.pi) * delta)


MOLLIFIERS = {"lorentzian": lorentzian, "gaussian": gaussian_mollifier}


@dataclass
class MollifiedSpectralFunction:
    """chi2(x) e(x, y) chi1(y) on the nodes of supp chi2 (rows) x supp chi1 (columns)."""

    kind: str
    width: float
    lam: float
    kernel: np.ndarray
    rows: np.ndarray  # node indices
    cols: np.ndarray
    row_points: np.ndarray
    col_points: np.ndarray

    def symmetric_defect(self) -> float:
        """max |e(x, y) - e(y, x)| over pairs present in both orientations."""
        common = np.intersect1d(self.rows, self.cols)
        if common.size == 0:
            return 0.0
        ri = np.searchsorted(self.rows, common)
        ci = np.searchsorted(self.cols, common)
        block = self.kernel[np.ix_(ri, ci)]
        return float(np.max(np.abs(block - block.conj().T)))


def _support_nodes(disc: GridDiscretization, chi):
    pts = disc.coordinates()
    vals = chi(pts)
    idx = np.nonzero(vals != 0)[0]
    return idx, vals[idx], pts[idx]


def spectral_function(
    window: SpectralWindow,
    disc: GridDiscretization,
    mollifier: str,
    width: float,
    chi1,
    chi2,
    lam: Optional[float] = None,
) -> MollifiedSpectralFunction:
    """e(x, y) = sum_j psi(lam_j - lam) v_j(x) v_j(y) / dx^n with cutoffs."""
    if mollifier not in MOLLIFIERS:
        raise ConfigError(f"unknown mollifier {mollifier!r}")
    lam = window.lam if lam is None else lam
    weights = MOLLIFIERS[mollifier](window.eigenvalues - lam, width)
    rows, c2, rpts = _support_nodes(disc, chi2)
    cols, c1, cpts = _support_nodes(disc, chi1)
    V = window.eigenvectors
    kernel = (V[rows] * weights) @ V[cols].T / disc.dx**disc.n
    kernel = c2[:, None] * kernel * c1[None, :]
    return MollifiedSpectralFunction(mollifier, width, lam, kernel, rows, cols, rpts, cpts)


def box_indices(disc: GridDiscretization, lo: float, hi: float, stride: int) -> np.ndarray:
    """Node indices of lo, lo + stride dx, ... (< hi) along a grid axis.

    ``lo`` must coincide with a node up to round-off.
    """
    j0 = (lo + disc.L) / disc.dx
    if abs(j0 - round(j0)) > 1e-6:
        raise ConfigError(f"box edge {lo} is not a grid node")
    count = int(round((hi - lo) / (stride * disc.dx)))
    j = int(round(j0)) + stride * np.arange(count)
    offset = 1 if disc.bc == "dirichlet" else 0
    idx = j - offset
    if idx[0] < 0 or idx[-1] >= disc.points:
        raise ConfigError("sub-box leaves the grid")
    return idx


def kernel_on_box(
    window: SpectralWindow,
    disc: GridDiscretization,
    mollifier: str,
    width: float,
    chi1,
    chi2,
    x_range: tuple,
    y_range: tuple,
    stride: int = 1,
    lam: Optional[float] = None,
) -> np.ndarray:
    """chi2(x) e(x, y) chi1(y) on the product of two axis sub-boxes (1D grids).

    Rows follow x in ``x_range`` and columns y in ``y_range``, both sampled
    every ``stride`` nodes.
    """
    if disc.n != 1:
        raise ConfigError("kernel boxes are available for one-dimensional grids")
    lam = window.lam if lam is None else lam
    ix = box_indices(disc, *x_range, stride)
    iy = box_indices(disc, *y_range, stride)
    ax = disc.axis()
    weights = MOLLIFIERS[mollifier](window.eigenvalues - lam, width)
    V = window.eigenvectors
    kernel = (V[ix] * weights) @ V[iy].T / disc.dx
    return chi2(ax[ix][:, None])[:, None] * kernel * chi1(ax[iy][:, None])[None, :]


class ResolventFactor:
    """LU factorisation of P - z for repeated solves with z = lam + i sign eps."""

    def __init__(self, P, lam: float, eps: float, sign: int = 1):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        self.z = lam + 1j * sign * eps
        A = (P - self.z * sp.identity(P.shape[0])).tocsc().astype(complex)
        try:
            self._lu = spla.splu(A)
        except RuntimeError as err:
            raise SolverFailure(str(err)) from err

    def solve(self, rhs, adjoint: bool = False) -> np.ndarray:
        out = self._lu.solve(np.asarray(rhs, dtype=complex), trans="H" if adjoint else "N")
        if not np.all(np.isfinite(out)):
            raise SolverFailure("non-finite resolvent solution")
        return out


def resolvent_solve(P, lam: float, eps: float, rhs, sign: int = 1) -> np.ndarray:
    """u solving (P - lam - i sign eps) u = rhs."""
    return ResolventFactor(P, lam, eps, sign).solve(rhs)


def resolvent_weights(disc: GridDiscretization, alpha: float, R0: float) -> np.ndarray:
    """<x>^-alpha outside B(0, R0) and 1 inside."""
    r = np.linalg.norm(disc.coordinates(), axis=1)
    w = (1.0 + r**2) ** (-0.5 * alpha)
    w[r <= R0] = 1.0
    return w


def weighted_operator_norm(P, lam: float, eps: float, weights, sign: int = 1, tol: float = 1e-8) -> float:
    """Largest singular value of W R(lam + i sign eps) W, with W = diag(weights).

    Uses ARPACK on the weighted operator and its adjoint, both applied via one
    sparse LU factorisation.
    """
    w = np.asarray(weights, dtype=float)
    fac = ResolventFactor(P, lam, eps, sign)
    N = w.size
    op = spla.LinearOperator(
        (N, N),
        matvec=lambda v: w * fac.solve(w * np.ravel(v)),
        rmatvec=lambda v: w * fac.solve(w * np.ravel(v), adjoint=True),
        dtype=complex,
    )
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(N) + 0j
    s = spla.svds(op, k=1, tol=tol, v0=v0, return_singular_vectors=False)
    return float(s[0])


@dataclass
class ScalingReport:
    h: np.ndarray
    eps: np.ndarray
    energies: np.ndarray
    norms: np.ndarray
    s_hat: float
    intercept: float
    grid_points: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "h": self.h.tolist(),
            "eps": self.eps.tolist(),
            "energies": self.energies.tolist(),
            "norms": self.norms.tolist(),
            "s_hat": self.s_hat,
            "intercept": self.intercept,
            "grid_points": self.grid_points,
        }


def fit_power_law(h, values) -> tuple:
    """Least-squares fit values ~ C h^(-s); returns (s, log C)."""
    h = np.asarray(h, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValueError("power-law fit needs positive finite values")
    slope, intercept = np.polyfit(np.log(h), np.log(values), 1)
    return float(-slope), float(intercept)


def well_energy(
    sys: SystemConfig,
    h: float,
    lam: Optional[float] = None,
    L_ref: float = 8.0,
    half_width: Optional[float] = None,
    mass_fraction: float = 0.9,
) -> float:
    """Eigenvalue nearest lam whose eigenvector lives inside B(0, R0).

    An eigenvector counts as localised when at least ``mass_fraction`` of its
    l2 mass sits in the ball. The search runs on a box of half-width ``L_ref``
    (localised states are insensitive to the box) within ``lam +- half_width``
    (default 4h). Returns lam itself when no localised state is found, so a
    non-trapping system is evaluated at the nominal energy.
    """
    lam = sys.lam if lam is None else lam
    half_width = 4 * h if half_width is None else half_width
    disc = make_discretization(sys, h, max(L_ref, 2 * sys.R0))
    P = assemble_operator(disc, sys)
    vals, vecs = _solve_window(disc, P, lam - half_width, lam + half_width)
    if vals.size == 0:
        return float(lam)
    inside = np.linalg.norm(disc.coordinates(), axis=1) <= sys.R0
    mass = np.sum(vecs[inside] ** 2, axis=0)
    local = vals[mass >= mass_fraction]
    if local.size == 0:
        return float(lam)
    return float(local[np.argmin(np.abs(local - lam))])


def damping_box(eps0: float, L_min: float = 8.0, reach: float = 6.0) -> Callable[[float], float]:
    """Box half-width max(L_min, reach / (eps0 h)).

    With eps = eps0 h^2 an outgoing wave decays over a length of order
    1 / (eps0 h), so this keeps boundary reflections damped along the ladder.
    """
    return lambda h: max(L_min, reach / (eps0 * h))


def resolvent_h_scaling(
    sys: SystemConfig,
    h_values: Sequence[float],
    eps_rule: Callable[[float], float],
    alpha: float = 1.0,
    L: float | Callable[[float], float] = 8.0,
    spacing: Optional[Callable[[float], float]] = None,
    energy: Optional[Callable[[float], float]] = None,
) -> ScalingReport:
    """Fit ||W R(E(h) + i eps(h)) W|| ~ h^(-s) over ``h_values``.

    ``L`` may depend on h so the box can outgrow the damping length of the
    complex shift; ``energy`` maps h to the evaluation energy (default lam).
    """
    if alpha <= 0.5:
        raise ConfigError("weight exponent alpha must exceed 1/2")
    hs = np.asarray(h_values, dtype=float)
    eps = np.array([eps_rule(h) for h in hs])
    energies = np.array([sys.lam if energy is None else energy(h) for h in hs])
    norms, points = [], []
    for h, e, lam in zip(hs, eps, energies):
        box = L(h) if callable(L) else L
        disc = make_discretization(sys, h, box, None if spacing is None else spacing(h))
        P = assemble_operator(disc, sys)
        norms.append(weighted_operator_norm(P, lam, e, resolvent_weights(disc, alpha, sys.R0)))
        points.append(disc.points)
    norms = np.array(norms)
    s_hat, c = fit_power_law(hs, norms)
    return ScalingReport(hs, eps, energies, norms, s_hat, c, points)


@dataclass
class StoneReport:
    deviation: float  # max abs kernel deviation
    kernel_max: float
    eigenpairs: int
    tail_bound: float  # bound on the truncated spectral sum (0 for the full sum)
    conjugate_defect: float  # max |R(lam - i eps) - conj R(lam + i eps)| on the block

    @property
    def relative(self) -> float:
        return self.deviation / self.kernel_max if self.kernel_max else self.deviation

    def to_dict(self) -> dict:
        return asdict(self)


def stone_formula_check(
    disc: GridDiscretization,
    P,
    lam: float,
    eps: float,
    chi1,
    chi2,
    window_delta: Optional[float] = None,
) -> StoneReport:
    """Compare chi2 [R(lam + i eps) - R(lam - i eps)] chi1 with 2 pi i chi2 e chi1.

    The spectral side uses the Lorentzian mollifier over the full spectrum, or
    over a window of half-width ``window_delta``. In the windowed case the
    omitted terms are bounded by ``2 eps / ((delta^2 + eps^2) dx^n)``, using
    sum_j |v_j(x) v_j(y)| <= 1 for an orthonormal basis.
    """
    rows, c2, _ = _support_nodes(disc, chi2)
    cols, c1, _ = _support_nodes(disc, chi1)
    if rows.size == 0 or cols.size == 0:
        raise ConfigError("cutoff supports contain no grid nodes")
    N = P.shape[0]
    rhs = np.zeros((N, cols.size))
    rhs[cols, np.arange(cols.size)] = 1.0
    scale = disc.dx**disc.n
    plus = ResolventFactor(P, lam, eps, 1).solve(rhs)[rows] / scale
    minus = ResolventFactor(P, lam, eps, -1).solve(rhs)[rows] / scale
    resolvent_side = c2[:, None] * (plus - minus) * c1[None, :]
    conj_defect = float(np.max(np.abs(minus - plus.conj())))

    if window_delta is None:
        vals, vecs = full_spectrum(disc, P)
        tail = 0.0
    else:
        vals, vecs = _solve_window(disc, P, lam - window_delta, lam + window_delta)
        tail = 2 * eps / ((window_delta**2 + eps**2) * scale)
    weights = lorentzian(vals - lam, eps)
    spectral = (vecs[rows] * weights) @ vecs[cols].T / scale
    spectral_side = 2j * np.pi * c2[:, None] * spectral * c1[None, :]
    dev = float(np.max(np.abs(resolvent_side - spectral_side)))
    return StoneReport(dev, float(np.max(np.abs(spectral_side))), int(vals.size), tail, conj_defect)
