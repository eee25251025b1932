"""Semiclassical Fourier analysis on periodic boxes.

F_h u(xi) = int exp(-i <x, xi> / h) u(x) dx is realised with the FFT on the
frequency grid xi_k = 2 pi h k / side, with quadrature weights so that values
approximate the integral. Op_h is the left quantization

    Op_h(a) u(x) = (2 pi h)^-k int exp(i <x, xi> / h) a(x, xi) F_h u(xi) dxi,

applied exactly on the grid for symbols given as finite sums of products
f(x) g(xi).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.polynomial.legendre import leggauss

from .errors import AliasingWarning, ConfigError, DegenerateFitError, UnboundedGrowthError
from .hamiltonian import SystemConfig
from .relations import smooth_step

ALIASING_FRACTION = 1e-6
N_MAX = 6


def _is_power_of_two(m: int) -> bool:
    return m > 0 and (m & (m - 1)) == 0


@dataclass
class GridField:
    """Samples of a function on the periodic box ``bounds`` (shape (k, 2)).

    Node j on axis i sits at ``lo_i + j * side_i / N_i``.
    """

    bounds: np.ndarray
    values: np.ndarray
    h: float
    check_power_of_two: bool = True

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        self.values = np.asarray(self.values, dtype=complex)
        if self.bounds.shape != (self.values.ndim, 2):
            raise ConfigError("bounds must have one (lo, hi) row per array axis")
        if np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ConfigError("box bounds must satisfy lo < hi")
        if self.check_power_of_two and not all(_is_power_of_two(m) for m in self.values.shape):
            raise ConfigError(f"sample counts {self.values.shape} must be powers of two")
        if self.h <= 0:
            raise ConfigError("h must be positive")

    @property
    def k(self) -> int:
        return self.values.ndim

    @property
    def sides(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0]

    @property
    def spacing(self) -> np.ndarray:
        return self.sides / np.array(self.values.shape)

    def axes(self) -> list:
        return [lo + np.arange(m) * d for (lo, _), m, d in zip(self.bounds, self.values.shape, self.spacing)]

    def coordinates(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * np.prod(self.spacing)))

    def with_values(self, values) -> "GridField":
        return GridField(self.bounds, values, self.h, self.check_power_of_two)

    @classmethod
    def from_function(cls, f: Callable, bounds, counts, h: float) -> "GridField":
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        counts = tuple(int(c) for c in np.atleast_1d(counts))
        shell = cls(bounds, np.zeros(counts), h)
        return shell.with_values(f(shell.coordinates()))


@dataclass
class MomentumField:
    """F_h of a GridField, stored in FFT order."""

    bounds: np.ndarray  # position box of the source field
    values: np.ndarray
    h: float

    @property
    def k(self) -> int:
        return self.values.ndim

    @property
    def dxi(self) -> np.ndarray:
        return 2 * np.pi * self.h / (self.bounds[:, 1] - self.bounds[:, 0])

    def axes(self) -> list:
        return [np.fft.fftfreq(m, d=1.0 / m) * d for m, d in zip(self.values.shape, self.dxi)]

    def momenta(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def with_values(self, values) -> "MomentumField":
        return MomentumField(self.bounds, np.asarray(values, dtype=complex), self.h)


def _phase_factor(bounds, axes, h, sign):
    out = 1.0
    for i, (lo, xi) in enumerate(zip(bounds[:, 0], axes)):
        shape = [1] * len(axes)
        shape[i] = xi.size
        out = out * np.exp(sign * 1j * lo * xi / h).reshape(shape)
    return out


def nyquist_fraction(F: MomentumField, shell: float = 0.1) -> float:
    """Fraction of |F|^2 carried by the outer ``shell`` of each frequency axis."""
    power = np.abs(F.values) ** 2
    total = power.sum()
    if total == 0:
        return 0.0
    mask = np.zeros(F.values.shape, dtype=bool)
    for i, m in enumerate(F.values.shape):
        idx = np.abs(np.fft.fftfreq(m, d=1.0 / m)) >= (1 - shell) * m / 2
        shape = [1] * F.k
        shape[i] = m
        mask |= idx.reshape(shape)
    return float(power[mask].sum() / total)


def semiclassical_fourier(u: GridField, check_aliasing: bool = True) -> MomentumField:
    """F_h u on the grid xi_k = 2 pi h k / side."""
    values = np.fft.fftn(u.values) * np.prod(u.spacing)
    F = MomentumField(u.bounds, values, u.h)
    F.values = values * _phase_factor(u.bounds, F.axes(), u.h, -1)
    if check_aliasing:
        frac = nyquist_fraction(F)
        if frac > ALIASING_FRACTION:
            warnings.warn(f"{frac:.2e} of the spectral mass sits in the Nyquist shell", AliasingWarning, stacklevel=2)
    return F


def inverse_semiclassical_fourier(F: MomentumField, check_power_of_two: bool = True) -> GridField:
    values = F.values * _phase_factor(F.bounds, F.axes(), F.h, +1)
    spacing = (F.bounds[:, 1] - F.bounds[:, 0]) / np.array(F.values.shape)
    return GridField(F.bounds, np.fft.ifftn(values) / np.prod(spacing), F.h, check_power_of_two)


def sobolev_norm(u: GridField, s: float) -> float:
    """||u||_{H^s_h} from (2 pi h)^-k int <xi>^{2s} |F_h u|^2 dxi."""
    F = semiclassical_fourier(u, check_aliasing=False)
    xi2 = np.sum(F.momenta() ** 2, axis=-1)
    integrand = (1 + xi2) ** s * np.abs(F.values) ** 2
    return float(np.sqrt(integrand.sum() * np.prod(F.dxi) / (2 * np.pi * u.h) ** u.k))


# --- symbols ---------------------------------------------------------------


@dataclass(frozen=True)
class SymbolTerm:
    """One product f(x) g(xi); ``None`` stands for the constant 1."""

    position: Optional[Callable] = None
    momentum: Optional[Callable] = None


@dataclass(frozen=True)
class Symbol:
    """a(x, xi) = sum_r f_r(x) g_r(xi), of h-order ``order``."""

    terms: tuple
    order: float = 0.0
    name: str = ""

    def __call__(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        total = 0.0
        for term in self.terms:
            f = 1.0 if term.position is None else term.position(x)
            g = 1.0 if term.momentum is None else term.momentum(xi)
            total = total + f * g
        return np.broadcast_to(total, np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])).astype(float)

    def __add__(self, other: "Symbol") -> "Symbol":
        return Symbol(self.terms + other.terms, max(self.order, other.order), f"{self.name}+{other.name}")

    def scaled(self, c: float) -> "Symbol":
        terms = tuple(
            SymbolTerm(
                (lambda x, f=t.position: c * (1.0 if f is None else f(x))),
                t.momentum,
            )
            for t in self.terms
        )
        return Symbol(terms, self.order, self.name)

    def discretize(self, u: GridField) -> "SymbolGrid":
        X = u.coordinates()
        Xi = MomentumField(u.bounds, np.zeros(u.values.shape), u.h).momenta()
        terms = []
        for t in self.terms:
            f = np.ones(u.values.shape) if t.position is None else np.broadcast_to(t.position(X), u.values.shape)
            g = np.ones(u.values.shape) if t.momentum is None else np.broadcast_to(t.momentum(Xi), u.values.shape)
            terms.append((np.asarray(f, dtype=complex), np.asarray(g, dtype=complex)))
        return SymbolGrid(u.bounds.copy(), u.values.shape, u.h, terms, self.order, self.name)


@dataclass
class SymbolGrid:
    """A symbol's product terms sampled on a field's position and frequency grids."""

    bounds: np.ndarray
    shape: tuple
    h: float
    terms: list  # (f on positions, g on momenta in FFT order)
    order: float = 0.0
    name: str = ""

    def support_defect(self, layer: float = 0.05) -> float:
        """Largest symbol magnitude on the outer position layer or Nyquist shell."""
        k = len(self.shape)
        edge = np.zeros(self.shape, dtype=bool)
        nyq = np.zeros(self.shape, dtype=bool)
        for i, m in enumerate(self.shape):
            j = np.arange(m)
            sh = [1] * k
            sh[i] = m
            edge |= ((j < layer * m) | (j >= (1 - layer) * m)).reshape(sh)
            nyq |= (np.abs(np.fft.fftfreq(m, d=1.0 / m)) >= (1 - layer) * m / 2).reshape(sh)
        worst = 0.0
        for f, g in self.terms:
            worst = max(worst, float(np.max(np.abs(f[edge]), initial=0.0) * np.max(np.abs(g))))
            worst = max(worst, float(np.max(np.abs(g[nyq]), initial=0.0) * np.max(np.abs(f))))
        return worst


def op_h_apply(a, u: GridField) -> GridField:
    """Op_h(a) u by transform, multiplication by each g_r, inverse, multiplication by f_r."""
    grid = a.discretize(u) if isinstance(a, Symbol) else a
    if tuple(grid.shape) != u.values.shape or grid.h != u.h:
        raise ConfigError("symbol grid and field are incompatible")
    F = semiclassical_fourier(u, check_aliasing=False)
    out = np.zeros(u.values.shape, dtype=complex)
    for f, g in grid.terms:
        out += f * inverse_semiclassical_fourier(F.with_values(F.values * g), u.check_power_of_two).values
    return u.with_values(out)


def _select(arr, axes):
    return arr[..., list(axes)]


def radial_bump(inner: float, outer: float, axes: Sequence[int], center=None) -> Callable:
    """Smooth function of the selected coordinates: 1 within ``inner``, 0 beyond ``outer``."""
    if not 0 <= inner < outer:
        raise ConfigError("bump radii must satisfy 0 <= inner < outer")
    c = 0.0 if center is None else np.asarray(center, dtype=float)

    def f(v):
        r = np.linalg.norm(_select(v, axes) - c, axis=-1)
        return smooth_step((outer - r) / (outer - inner))

    return f


def bump_symbol(x_center, x_inner, x_outer, xi_inner, xi_outer, axes: Sequence[int] = (0,), xi_center=None) -> Symbol:
    """rho(x) rho(xi): a compactly supported cutoff symbol."""
    return Symbol(
        (SymbolTerm(radial_bump(x_inner, x_outer, axes, x_center), radial_bump(xi_inner, xi_outer, axes, xi_center)),),
        name="cutoff",
    )


def shell_symbol(
    sys: SystemConfig,
    axes: Sequence[int],
    x_cut: Callable,
    xi_inner: float = 2.0,
    xi_outer: float = 3.0,
    shift: float = 0.0,
) -> Symbol:
    """rho(x_S) rho(xi_S) (|xi_S|^2 / 2 + V(x_S) - lam - shift) on the factor ``axes``.

    With ``shift = 0`` it vanishes on the energy shell of that factor, hence on
    both twisted relations; a nonzero shift gives a symbol that does not.
    """
    axes = tuple(axes)
    rho_xi = radial_bump(xi_inner, xi_outer, axes)

    def f_pot(x):
        return x_cut(x) * (sys.V(_select(x, axes)) - sys.lam - shift)

    def g_kin(xi):
        return rho_xi(xi) * 0.5 * np.sum(_select(xi, axes) ** 2, axis=-1)

    return Symbol((SymbolTerm(x_cut, g_kin), SymbolTerm(f_pot, rho_xi)), name=f"shell{axes}")


def linear_symbol(axis: int, slope_of: Callable, x_cut: Callable, xi_inner: float = 2.0, xi_outer: float = 3.0) -> Symbol:
    """rho(x) rho(xi) (xi_axis - dS(x)): vanishes on {xi_axis = dS(x)}."""
    rho_xi = radial_bump(xi_inner, xi_outer, (axis,))

    def g_lin(xi):
        return rho_xi(xi) * xi[..., axis]

    def f_shift(x):
        return -x_cut(x) * slope_of(x)

    return Symbol((SymbolTerm(x_cut, g_lin), SymbolTerm(f_shift, rho_xi)), name=f"linear{axis}")


# --- membership probes and order tests -----------------------------------


def fit_slope(h, values) -> tuple:
    """Least-squares log-log slope and intercept of values against h."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 1e-300):
        raise DegenerateFitError("norms must be positive and finite for a power-law fit")
    slope, intercept = np.polyfit(np.log(h), np.log(v), 1)
    return float(slope), float(intercept)


@dataclass
class DPrimeReport:
    N: int
    C_N: float
    growth_slopes: list  # log-log slope of max_xi |F| h^N <xi>^-N, per N
    xi_extent: float

    def to_dict(self) -> dict:
        return asdict(self)


def dprime_h_probe(
    fields: Sequence[GridField],
    chi: Optional[Callable] = None,
    N_max: int = N_MAX,
    slope_tol: float = 0.1,
    extent_floor: float = 1e-6,
) -> DPrimeReport:
    """Smallest N for which max_xi |F_h(chi u)| h^N <xi>^-N stays bounded as h -> 0.

    Boundedness means the log-log slope in h is at least ``-slope_tol``.
    ``xi_extent`` is the largest |xi| where |F_h(chi u)| exceeds
    ``extent_floor`` times its maximum, at the smallest h.
    """
    if len(fields) < 2:
        raise ConfigError("need at least two values of h")
    hs, spectra = [], []
    for u in fields:
        v = u if chi is None else u.with_values(u.values * chi(u.coordinates()))
        F = semiclassical_fourier(v, check_aliasing=False)
        spectra.append((np.abs(F.values), np.sqrt(1 + np.sum(F.momenta() ** 2, axis=-1))))
        hs.append(u.h)
    hs = np.asarray(hs)
    slopes = []
    for N in range(N_max + 1):
        M = np.array([np.max(a * h**N * w ** (-N)) for (a, w), h in zip(spectra, hs)])
        if np.all(M == 0):
            return DPrimeReport(0, 0.0, [0.0], 0.0)
        slope, _ = fit_slope(hs, M)
        slopes.append(slope)
        if slope >= -slope_tol:
            a, w = spectra[int(np.argmin(hs))]
            xi_abs = np.sqrt(w**2 - 1)
            extent = float(np.max(xi_abs[a >= extent_floor * a.max()]))
            return DPrimeReport(N, float(M.max()), slopes, extent)
    raise UnboundedGrowthError(f"no N <= {N_max} bounds the transform; slopes {slopes}")


@dataclass
class OrderTestReport:
    h: list
    N_values: list
    k: int
    norms: dict  # N -> norms over h
    slopes: dict  # N -> fitted exponent of the norm in h
    gains: list  # slope increase per added vanishing factor
    r_hat: dict  # N -> N - slope - k / 4
    r_band: tuple
    symbol_residual: float
    label: str = ""

    @property
    def min_gain(self) -> float:
        return min(self.gains)

    @property
    def max_gain(self) -> float:
        return max(self.gains)

    @property
    def r_mean(self) -> float:
        return float(np.mean(list(self.r_hat.values())))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "h": list(self.h),
            "N_values": list(self.N_values),
            "k": self.k,
            "norms": {str(k): list(v) for k, v in self.norms.items()},
            "slopes": {str(k): v for k, v in self.slopes.items()},
            "gains": list(self.gains),
            "r_hat": {str(k): v for k, v in self.r_hat.items()},
            "r_mean": self.r_mean,
            "r_band": list(self.r_band),
            "symbol_residual": self.symbol_residual,
        }


def apply_product(u: GridField, vanishing: Sequence, cutoff, N: int) -> GridField:
    """A_0 A_1 ... A_{N-1} A_N u with A_N the cutoff and A_j = Op_h(vanishing[j])."""
    v = op_h_apply(cutoff, u)
    for j in reversed(range(N)):
        v = op_h_apply(vanishing[j], v)
    return v


def fio_order_test(
    fields: Sequence[GridField],
    vanishing: Sequence[Symbol],
    cutoff: Symbol,
    N_values: Sequence[int] = (0, 1, 2),
    k: Optional[int] = None,
    lambda_points: Optional[np.ndarray] = None,
    label: str = "",
) -> OrderTestReport:
    """Fit ||A_0 ... A_N u|| ~ h^slope per N and infer r = N - slope - k/4.

    ``lambda_points`` (rows ``(x, xi)`` in the field's phase space) are used
    to report how far the vanishing symbols are from zero on the sampled
    Lagrangian.
    """
    N_values = sorted(int(N) for N in N_values)
    if len(fields) < 4:
        raise ConfigError("order fits need at least four values of h")
    if N_values[-1] > len(vanishing):
        raise ConfigError("not enough vanishing symbols for the requested N")
    k = fields[0].k if k is None else k
    hs = [u.h for u in fields]
    norms = {N: [] for N in N_values}
    for u in fields:
        grids = [a.discretize(u) for a in vanishing[: N_values[-1]]]
        cut = cutoff.discretize(u)
        for N in N_values:
            norms[N].append(apply_product(u, grids, cut, N).l2_norm())
    slopes = {N: fit_slope(hs, norms[N])[0] for N in N_values}
    gains = [
        (slopes[b] - slopes[a]) / (b - a) for a, b in zip(N_values, N_values[1:])
    ]
    r_hat = {N: N - slopes[N] - k / 4 for N in N_values}
    residual = 0.0
    if lambda_points is not None and len(vanishing):
        pts = np.asarray(lambda_points, dtype=float)
        x, xi = pts[:, :k], pts[:, k:]
        residual = max(float(np.max(np.abs(a(x, xi)))) for a in vanishing)
    return OrderTestReport(
        hs, N_values, k, norms, slopes, gains, r_hat, (min(r_hat.values()), max(r_hat.values())), residual, label
    )


# --- oscillatory integrals and amplitudes -----------------------------------


@dataclass
class OscillatoryResult:
    value: complex
    stationary_phase: complex
    t_star: Optional[float]
    d2S: Optional[float]
    panels: int
    error_estimate: float


def _vectorized(f):
    def g(t):
        t = np.asarray(t, dtype=float)
        try:
            out = np.asarray(f(t), dtype=complex)
            if out.shape == t.shape:
                return out
        except (TypeError, ValueError):
            pass
        return np.array([f(float(s)) for s in t.ravel()], dtype=complex).reshape(t.shape)

    return g


def oscillatory_eval(
    S: Callable,
    a: Callable,
    h: float,
    t_support: tuple,
    t_star: Optional[float] = None,
    rtol: float = 1e-10,
    max_panels: int = 1 << 14,
    chebyshev_degree: Optional[int] = 48,
) -> OscillatoryResult:
    """int exp(i S(t) / h) a(t) dt over ``t_support``, with its stationary-phase value.

    The phase is replaced by a Chebyshev interpolant of ``chebyshev_degree``
    (pass None to evaluate S directly). Quadrature is composite
    Gauss-Legendre, doubling the panel count until two successive values
    agree to ``rtol``. The leading stationary-phase term
    sqrt(2 pi h / |S''|) exp(i S / h + i pi/4 sgn S'') a(t*) is returned
    alongside (zero when S has no critical point in the support).
    """
    lo, hi = map(float, t_support)
    if not lo < hi:
        raise ConfigError("empty t support")
    amp = _vectorized(a)
    if chebyshev_degree is None:
        phase = _vectorized(S)
        dphase = d2phase = None
    else:
        cheb = Chebyshev.interpolate(lambda t: np.real(_vectorized(S)(t)), chebyshev_degree, domain=[lo, hi])
        phase = cheb
        dphase, d2phase = cheb.deriv(1), cheb.deriv(2)

    nodes, weights = leggauss(16)

    def composite(panels):
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        t = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        w = (half[:, None] * weights[None, :]).ravel()
        return np.sum(w * np.exp(1j * np.real(phase(t)) / h) * amp(t))

    panels = 8
    prev = composite(panels)
    err = np.inf
    while panels < max_panels:
        panels *= 2
        cur = composite(panels)
        err = abs(cur - prev)
        prev = cur
        if err <= rtol * max(abs(cur), 1e-300):
            break

    sp_value, d2 = 0j, None
    if t_star is None and dphase is not None:
        roots = dphase.roots()
        roots = np.real(roots[(np.abs(np.imag(roots)) < 1e-9) & (np.real(roots) >= lo) & (np.real(roots) <= hi)])
        if roots.size:
            t_star = float(roots[np.argmin(np.abs(roots - 0.5 * (lo + hi)))])
    if t_star is not None:
        if d2phase is not None:
            d2 = float(d2phase(t_star))
        else:
            step = 1e-4 * max(1.0, abs(t_star))
            s0, sp, sm = (float(np.real(phase(np.array(v)))) for v in (t_star, t_star + step, t_star - step))
            d2 = (sp - 2 * s0 + sm) / step**2
        if d2 != 0:
            s_val = float(np.real(phase(np.array(t_star))))
            sp_value = (
                np.sqrt(2 * np.pi * h / abs(d2))
                * np.exp(1j * s_val / h + 1j * np.pi / 4 * np.sign(d2))
                * complex(amp(np.array([t_star]))[0])
            )
    return OscillatoryResult(complex(prev), complex(sp_value), t_star, d2, panels, float(err))


@dataclass
class AmplitudeReport:
    h: list
    sup: list
    g_hat: float
    bound: float
    above_bound: bool

    def to_dict(self) -> dict:
        return asdict(self)


def demodulate(u: GridField, phase: Callable, lowpass: Optional[float] = None) -> GridField:
    """exp(-i S / h) u, optionally keeping only |xi| <= lowpass afterwards."""
    v = u.with_values(u.values * np.exp(-1j * phase(u.coordinates()) / u.h))
    if lowpass is None:
        return v
    F = semiclassical_fourier(v, check_aliasing=False)
    keep = np.sqrt(np.sum(F.momenta() ** 2, axis=-1)) <= lowpass
    return inverse_semiclassical_fourier(F.with_values(F.values * keep), u.check_power_of_two)


def amplitude_extract(
    fields: Sequence[GridField],
    phase: Callable,
    n: int,
    lowpass: Optional[float] = 0.5,
    tolerance: float = 0.3,
) -> AmplitudeReport:
    """Fit sup |exp(-i S / h) e| ~ h^-g over the ladder and compare with (n + 3) / 2.

    The low-pass filter (in semiclassical frequency) isolates the branch
    whose phase is ``phase``; pass ``lowpass=None`` for the raw modulus.
    """
    hs, sups = [], []
    for u in fields:
        hs.append(u.h)
        sups.append(float(np.max(np.abs(demodulate(u, phase, lowpass).values))))
    slope, _ = fit_slope(hs, sups)
    g_hat = -slope
    bound = (n + 3) / 2
    return AmplitudeReport(hs, sups, g_hat, bound, bool(g_hat > bound + tolerance))
