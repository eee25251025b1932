"""The four reproduction pipelines.

A  classical side: flow quality, twisted relations, action charts, gradient
   identities, stationary times and containment of the phase Lagrangian.
B  order of the spectral-function kernel as a Lagrangian distribution,
   measured by the gain per vanishing symbol factor.
C  phase and amplitude of the kernel against the action near an anchor.
D  finite-epsilon Stone identity and h-scaling of the weighted resolvent.

Every pipeline returns a :class:`PipelineReport` and writes its tables,
JSON report and SVG plots through an :class:`ArtifactWriter`. Numerical
failures propagate as :class:`NumericalError`; the caller turns them into a
diagnostic report.
"""

from __future__ import annotations

import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.interpolate import RectBivariateSpline

from .action import (
    ActionChart,
    build_chart,
    build_phase_lagrangian,
    find_conjugate_time,
    action_value,
    gradient_grid,
    shooting_solve,
    stationary_point_solve,
    stationary_time_scan,
    verify_gradients,
)
from .config import ExperimentConfig
from .errors import ConfigError, NoCrossingError, NumericalError, SpectralFIOError
from .flow import flow_map, integrate_trajectory, integrate_variational, scan_energy_trapping
from .hamiltonian import PhasePoint, PotentialModel, SystemConfig, energy_shell_sample
from .io.reporting import ArtifactWriter
from .microlocal import (
    GridField,
    Symbol,
    SymbolTerm,
    amplitude_extract,
    fio_order_test,
    oscillatory_eval,
    radial_bump,
    shell_symbol,
)
from .relations import build_relation, check_disjointness, lagrangian_residual, seed_grid
from .spectral import (
    EigenCache,
    assemble_operator,
    box_indices,
    damping_box,
    kernel_on_box,
    make_discretization,
    resolvent_h_scaling,
    spectral_window,
    stone_formula_check,
    well_energy,
)

UNCERTIFIED = "resolvent bound not certified"


@dataclass
class Check:
    """One thresholded comparison. ``op`` is '<', '<=', '>' or 'in'."""

    name: str
    value: float
    threshold: object
    op: str
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def below(name: str, value: float, threshold: float) -> Check:
    return Check(name, float(value), threshold, "<", bool(value < threshold))


def above(name: str, value: float, threshold: float) -> Check:
    return Check(name, float(value), threshold, ">", bool(value > threshold))


def within(name: str, value: float, lo: float, hi: float) -> Check:
    return Check(name, float(value), [lo, hi], "in", bool(lo <= value <= hi))


@dataclass
class PipelineReport:
    """Outcome of one pipeline: 'pass', 'fail', 'skipped' or 'error'."""

    pipeline: str
    scenario: str
    status: str = "pass"
    checks: list = field(default_factory=list)
    reason: str = ""
    details: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status in ("pass", "skipped")

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def finalize(self) -> "PipelineReport":
        if self.status == "pass" and not all(c.passed for c in self.checks):
            self.status = "fail"
        return self

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "scenario": self.scenario,
            "status": self.status,
            "reason": self.reason,
            "runtime": self.runtime,
            "checks": [c.to_dict() for c in self.checks],
            "details": self.details,
            "artifacts": [str(p) for p in self.artifacts],
        }


def error_code(err: Exception) -> str:
    """SingularJacobianError -> 'singular_jacobian'."""
    name = type(err).__name__
    name = re.sub(r"Error$", "", name)
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).lower()


def diagnostic_report(pipeline: str, scenario: str, err: Exception) -> PipelineReport:
    details = {"error": error_code(err), "type": type(err).__name__, "message": str(err)}
    for attr in ("last_time", "last_state"):
        if getattr(err, attr, None) is not None:
            details[attr] = np.asarray(getattr(err, attr)).tolist()
    return PipelineReport(pipeline, scenario, "error", reason=str(err), details=details)


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def relation_anchor(cfg: ExperimentConfig, sys: SystemConfig):
    """First forward relation sample launched from the centre of supp chi1 towards chi2."""
    c1, c2 = cfg.chi1(), cfg.chi2()
    direction = _unit(np.subtract(c2.center, c1.center))
    cloud = build_relation(
        sys, 1, c1, c2, [(np.array(c1.center), direction)], cfg.relations.t_max, tol=cfg.tolerances.flow
    )
    if not cloud.samples:
        raise NoCrossingError("the anchor ray from the centre of supp chi1 never reaches supp chi2")
    return cloud.samples[0]


def energy_gate(cfg: ExperimentConfig, sys: SystemConfig) -> Optional[str]:
    """Reason string when the energy cannot be certified non-trapping, else None."""
    scan = scan_energy_trapping(sys, cfg.relations.horizon, positions=21 if sys.n == 1 else 7)
    if scan.non_trapping:
        return None
    return f"{UNCERTIFIED}: {len(scan.undecided)} of {scan.checked} shell samples over B(0, R0) stay trapped"


# --- pipeline A ----------------------------------------------------------------


def _flow_quality(cfg: ExperimentConfig, sys: SystemConfig, rep: PipelineReport, out: ArtifactWriter) -> None:
    tol = cfg.tolerances
    T = cfg.relations.t_max
    rows = []
    for y, d in seed_grid(cfg.chi1(), cfg.relations.n_positions, cfg.relations.n_directions):
        start = energy_shell_sample(sys, y, d)
        try:
            drift = integrate_trajectory(sys, start, (-T, T), tol=tol.flow).max_drift
        except NumericalError:
            drift = float("inf")  # drift above tol.flow is reported as a failed check
        frame = integrate_variational(sys, start, T, tol=tol.flow)
        back = flow_map(sys, frame.point, -T, tol=tol.flow)
        rows.append(
            [
                *start.x,
                *start.xi,
                drift,
                frame.symplectic_residual(),
                abs(frame.det() - 1.0),
                float(np.max(np.abs(back.as_vector() - start.as_vector()))),
            ]
        )
    arr = np.array(rows)
    n = sys.n
    out.csv(
        "A_flow_quality.csv",
        [f"x{i + 1}" for i in range(n)] + [f"xi{i + 1}" for i in range(n)]
        + ["energy_drift", "symplectic_residual", "det_defect", "time_reversal"],
        rows,
    )
    rep.add(below("energy_drift", arr[:, 2 * n].max(), tol.flow))
    rep.add(below("symplectic_residual", arr[:, 2 * n + 1].max(), tol.symplectic))
    rep.add(below("det_defect", arr[:, 2 * n + 2].max(), tol.symplectic))
    rep.add(below("time_reversal", arr[:, 2 * n + 3].max(), tol.time_reversal))


def _relations(cfg: ExperimentConfig, sys: SystemConfig, rep: PipelineReport, out: ArtifactWriter) -> None:
    c1, c2 = cfg.chi1(), cfg.chi2()
    seeds = seed_grid(c1, cfg.relations.n_positions, cfg.relations.n_directions)
    clouds = {s: build_relation(sys, s, c1, c2, seeds, cfg.relations.t_max, tol=cfg.tolerances.flow) for s in (1, -1)}
    for s, cloud in clouds.items():
        out.adopt(cloud.to_csv(out.root / f"{out.prefix}A_relation_{'plus' if s > 0 else 'minus'}.csv"))
    res = max(lagrangian_residual(clouds[1].samples), lagrangian_residual(clouds[-1].samples))
    rep.details["relation_samples"] = {"plus": len(clouds[1]), "minus": len(clouds[-1])}
    if not len(clouds[1]) or not len(clouds[-1]):
        raise NoCrossingError("no seed reaches supp chi2 in one of the time directions")
    rep.add(below("lagrangian_residual", res, cfg.tolerances.lagrangian))
    rep.add(above("relation_distance", check_disjointness(clouds[1], clouds[-1]), cfg.tolerances.disjointness))


def _anchor_chart(cfg: ExperimentConfig, sys: SystemConfig, rep: PipelineReport) -> ActionChart:
    act = cfg.action
    if act.caustic:
        c1, c2 = cfg.chi1(), cfg.chi2()
        y0 = np.array(c1.center)
        eta0 = energy_shell_sample(sys, y0, _unit(np.subtract(c2.center, c1.center))).xi
        t0 = find_conjugate_time(sys, y0, eta0, act.caustic_t_max, tol=cfg.tolerances.flow)
        rep.details["conjugate_time"] = t0
        return build_chart(sys, y0, eta0, t0, caps=act.caps, flow_tol=cfg.tolerances.flow)
    smp = relation_anchor(cfg, sys)
    return build_chart(sys, smp.left_x, -smp.left_xi, smp.t, window=act.window, caps=act.caps, flow_tol=cfg.tolerances.flow)


def _free_closed_form(cfg, chart: ActionChart, rep: PipelineReport, out: ArtifactWriter) -> None:
    """S = |z - y|^2 / (2t) + lam t on random in-window queries (V = 0 only)."""
    rng = np.random.default_rng(cfg.seed)
    lam = chart.sys.lam
    rows, worst = [], 0.0
    for _ in range(cfg.action.random_queries):
        t = rng.uniform(*chart.t_window)
        y = rng.uniform(chart.y_box[:, 0], chart.y_box[:, 1])
        z = rng.uniform(chart.z_box[:, 0], chart.z_box[:, 1])
        S = action_value(chart, t, y, z)
        exact = float(np.sum((z - y) ** 2) / (2 * t) + lam * t)
        worst = max(worst, abs(S - exact))
        rows.append([t, *y, *z, S, exact, abs(S - exact)])
    n = chart.n
    out.csv(
        "A_free_action.csv",
        ["t"] + [f"y{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(n)] + ["S", "closed_form", "error"],
        rows,
    )
    rep.add(below("free_action_closed_form", worst, cfg.tolerances.closed_form_action))


def _stationary_pairs(chart: ActionChart, count: int) -> list:
    """(y, z) pairs around the anchor, shifted in opposite directions along the first axis."""
    n = chart.n
    e1 = np.eye(n)[0]
    half = 0.5 * min(np.min(np.diff(chart.y_box, axis=1)), np.min(np.diff(chart.z_box, axis=1))) / 2
    offsets = np.linspace(-half, half, count) if count > 1 else np.zeros(1)
    return [(chart.y0 + d * e1, chart.z0 - d * e1) for d in offsets]


def run_pipeline_A_action(cfg: ExperimentConfig, out: ArtifactWriter, jobs: int = 1) -> PipelineReport:
    """Flow quality, relations, chart identities, stationary times and containment."""
    sys = cfg.system_config()
    rep = PipelineReport("A", cfg.scenario)
    _flow_quality(cfg, sys, rep, out)
    _relations(cfg, sys, rep, out)
    try:
        _chart_checks(cfg, sys, rep, out)
    except (SpectralFIOError, FloatingPointError, np.linalg.LinAlgError) as err:
        # keep the flow and relation checks that already ran
        diag = diagnostic_report("A", cfg.scenario, err)
        rep.details.update(diag.details)
        rep.status, rep.reason = "error", diag.reason
        return rep
    return rep.finalize()


def _chart_checks(cfg: ExperimentConfig, sys: SystemConfig, rep: PipelineReport, out: ArtifactWriter) -> None:
    tol = cfg.tolerances
    chart = _anchor_chart(cfg, sys, rep)
    rep.details["chart"] = {
        "t0": chart.t0,
        "t_window": list(chart.t_window),
        "y_box": chart.y_box.tolist(),
        "z_box": chart.z_box.tolist(),
        "anchor_det": chart.anchor_det,
    }

    grads = gradient_grid(chart, cfg.action.grid_points, fd_step=tol.fd_step)
    n = sys.n
    out.csv(
        "A_gradients.csv",
        ["t"] + [f"y{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(n)]
        + [f"eta{i + 1}" for i in range(n)] + ["S", "dzS_error", "dyS_error"],
        [[g.t, *g.y, *g.z, *g.eta, g.action, g.dzS_error, g.dyS_error] for g in grads],
    )
    rep.add(below("gradient_identity_z", max(g.dzS_error for g in grads), tol.identity))
    rep.add(below("gradient_identity_y", max(g.dyS_error for g in grads), tol.identity))

    free = sys.potential.kind == "zero"
    if free:
        _free_closed_form(cfg, chart, rep, out)

    t_grid = np.linspace(*chart.t_window, cfg.action.scan_points)
    # scan points audit d_t S; the Newton points (exact t*) feed the phase Lagrangian
    points, exact, scan_rows, sign_errors, solve_gap = [], [], [], [], 0.0
    for y, z in _stationary_pairs(chart, cfg.action.stationary_pairs):
        scan = stationary_time_scan(chart, y, z, t_grid, fd_step=tol.fd_step)
        sign_errors.append(scan.sign_errors)
        for t, S, d, e in zip(scan.t_grid, scan.action, scan.dtS, scan.energy_excess):
            scan_rows.append([*y, *z, t, S, d, e])
        for p in scan.points:
            direct = stationary_point_solve(chart, y, z, t_guess=p.t, eta_guess=p.eta)
            solve_gap = max(solve_gap, abs(direct.t - p.t))
            points.append(p)
            exact.append(direct)
    out.csv(
        "A_stationary_scan.csv",
        [f"y{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(n)] + ["t", "S", "dtS", "energy_excess"],
        scan_rows,
    )
    rep.details["dtS_sign_errors"] = sign_errors
    rep.details["stationary_times"] = [p.t for p in points]
    rep.add(below("stationary_scan_vs_newton", solve_gap, tol.stationary_time))
    rep.add(above("stationary_nondegeneracy", min(abs(p.d2tS) for p in points), tol.nondegeneracy))
    if free:
        gap = max(abs(p.t - np.linalg.norm(p.z - p.y) / np.sqrt(2 * sys.lam)) for p in points)
        rep.add(below("free_stationary_time", gap, tol.stationary_time))

    lag = build_phase_lagrangian(chart, exact, fd_step=tol.fd_step)
    out.csv(
        "A_phase_lagrangian.csv",
        ["t"] + [f"y{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(n)]
        + [f"dyS{i + 1}" for i in range(n)] + [f"dzS{i + 1}" for i in range(n)] + ["containment"],
        [[p.t, *p.y, *p.z, *g.dyS, *g.dzS, r] for p, g, r in zip(exact, lag.gradients, lag.residuals)],
    )
    rep.add(below("containment", lag.max_residual, tol.containment))
    rep.add(below("phase_lagrangian_residual", lagrangian_residual(lag.samples), tol.lagrangian))


# --- shared kernel builders (module level so worker processes can pickle them) ---


def _kernel_disc(cfg: ExperimentConfig, h: float):
    sys = cfg.system_config()
    disc = make_discretization(sys, h, cfg.grid.L, spacing=h / cfg.grid.spacing_factor)
    P = assemble_operator(disc, sys)
    width = cfg.order.mollifier_width * h
    window = spectral_window(
        disc, P, sys.lam, cfg.order.window_widths * width, sys, EigenCache(cfg.cache_dir) if cfg.cache_dir else None
    )
    return sys, disc, window, width


def _order_job(args):
    cfg, h = args
    _, disc, window, width = _kernel_disc(cfg, h)
    hs = cfg.order.half_side
    x0, y0 = cfg.chi2().center[0], cfg.chi1().center[0]
    K = kernel_on_box(
        window, disc, "gaussian", width, cfg.chi1(), cfg.chi2(), (x0 - hs, x0 + hs), (y0 - hs, y0 + hs), cfg.grid.stride
    )
    return K, window.count


def _phase_job(args):
    cfg, h, patch, row_x, row_y, outside = args
    _, disc, window, width = _kernel_disc(cfg, h)
    c1, c2 = cfg.chi1(), cfg.chi2()
    stride = cfg.grid.stride
    K = kernel_on_box(window, disc, "gaussian", width, c1, c2, patch[0], patch[1], stride)
    row = kernel_on_box(window, disc, "gaussian", width, c1, c2, row_x, row_y, stride)[:, 0]
    row_coords = disc.axis()[box_indices(disc, *row_x, stride)]
    off = kernel_on_box(window, disc, "gaussian", width, c1, c2, patch[0], outside, stride)
    return K, row, row_coords, float(np.max(np.abs(off))) if off.size else 0.0


def _one_dimensional(cfg: ExperimentConfig, sys: SystemConfig, pipeline: str) -> Optional[PipelineReport]:
    if sys.n != 1:
        return PipelineReport(
            pipeline, cfg.scenario, "skipped", reason="grid reference kernels are built for one-dimensional systems"
        )
    reason = energy_gate(cfg, sys)
    if reason:
        return PipelineReport(pipeline, cfg.scenario, "skipped", reason=reason)
    return None


# --- pipeline B ----------------------------------------------------------------


def _order_symbols(cfg: ExperimentConfig, sys: SystemConfig, shift: float = 0.0):
    o = cfg.order
    hs = o.half_side
    x0, y0 = cfg.chi2().center[0], cfg.chi1().center[0]
    x_cut = radial_bump(0.6 * hs, 0.9 * hs, (0,), x0)
    y_cut = radial_bump(0.6 * hs, 0.9 * hs, (1,), y0)
    vanishing = [
        shell_symbol(sys, (0,), x_cut, o.xi_inner, o.xi_outer, shift),
        shell_symbol(sys, (1,), y_cut, o.xi_inner, o.xi_outer, shift),
    ]
    cutoff = Symbol(
        (SymbolTerm(radial_bump(0.75 * hs, 0.95 * hs, (0, 1), (x0, y0)), radial_bump(o.xi_inner, o.xi_outer, (0, 1))),),
        name="cutoff",
    )
    return vanishing, cutoff


def wkb_control_fields(cfg: ExperimentConfig, sys: SystemConfig, like: Sequence[GridField]) -> list:
    """Synthetic Lagrangian distributions cos(sqrt(2 lam) (x - y) / h) times a smooth bump."""
    k = np.sqrt(2 * sys.lam)
    x0, y0 = cfg.chi2().center[0], cfg.chi1().center[0]
    bump = radial_bump(0.3 * cfg.order.half_side, 0.8 * cfg.order.half_side, (0, 1), (x0, y0))
    out = []
    for u in like:
        X = u.coordinates()
        out.append(u.with_values(bump(X) * np.cos(k * (X[..., 0] - X[..., 1]) / u.h)))
    return out


def run_pipeline_B_order(cfg: ExperimentConfig, out: ArtifactWriter, jobs: int = 1) -> PipelineReport:
    """Gain per vanishing symbol factor on the grid spectral-function kernel."""
    sys = cfg.system_config()
    skipped = _one_dimensional(cfg, sys, "B")
    if skipped:
        return skipped
    tol = cfg.tolerances
    rep = PipelineReport("B", cfg.scenario)
    hs = cfg.order.half_side
    x0, y0 = cfg.chi2().center[0], cfg.chi1().center[0]
    bounds = [[x0 - hs, x0 + hs], [y0 - hs, y0 + hs]]
    results = _map(_order_job, [(cfg, h) for h in cfg.h_ladder], jobs)
    fields = [GridField(bounds, K, h) for (K, _), h in zip(results, cfg.h_ladder)]
    rep.details["window_eigenpairs"] = [c for _, c in results]

    # Lambda^+ points in the (x, y) layout of the kernel box
    smp = relation_anchor(cfg, sys)
    lam_pts = np.array([[smp.right_x[0], smp.left_x[0], smp.right_xi[0], smp.left_xi[0]]])

    vanishing, cutoff = _order_symbols(cfg, sys)
    N_values = cfg.order.N_values
    control = fio_order_test(wkb_control_fields(cfg, sys, fields), vanishing, cutoff, N_values, label="wkb_control")
    main = fio_order_test(fields, vanishing, cutoff, N_values, lambda_points=lam_pts, label="kernel")
    bad_v, _ = _order_symbols(cfg, sys, cfg.order.negative_shift)
    negative = fio_order_test(fields, bad_v, cutoff, N_values, label="negative_control")

    rows = []
    for r in (control, main, negative):
        for N in r.N_values:
            rows.extend([r.label, N, h, v] for h, v in zip(r.h, r.norms[N]))
    out.csv("B_order_norms.csv", ["label", "N", "h", "norm"], rows)
    out.json("B_order_report.json", {r.label: r.to_dict() for r in (control, main, negative)})
    out.svg(
        "B_order_norms.svg",
        {f"{r.label} N={N}": (r.h, r.norms[N]) for r in (main, negative) for N in r.N_values},
        title="Norm of the symbol product against h",
        xlabel="h",
        ylabel="norm",
        logx=True,
        logy=True,
    )
    rep.details.update(
        {
            "h": list(main.h),
            "gains": main.gains,
            "r_hat": main.r_hat,
            "control_gains": control.gains,
            "negative_gains": negative.gains,
            "symbol_residual": main.symbol_residual,
        }
    )
    rep.add(within("control_gain_min", control.min_gain, tol.gain_low, tol.gain_high))
    rep.add(within("control_gain_max", control.max_gain, tol.gain_low, tol.gain_high))
    rep.add(within("gain_min", main.min_gain, tol.gain_low, tol.gain_high))
    rep.add(within("gain_max", main.max_gain, tol.gain_low, tol.gain_high))
    rep.add(below("negative_gain", max(abs(g) for g in negative.gains), tol.negative_gain))
    rep.add(below("r_hat_spread", main.r_band[1] - main.r_band[0], tol.r_band))
    return rep.finalize()


# --- pipeline C ----------------------------------------------------------------


def analytic_phase_gradient(row: np.ndarray, dx: float, h: float, index: int) -> float:
    """h times the x-derivative of the unwrapped phase of the positive-frequency part of ``row``."""
    F = np.fft.fft(row)
    freq = np.fft.fftfreq(row.size)
    F[freq < 0] = 0
    F[freq > 0] *= 2
    phase = np.unwrap(np.angle(np.fft.ifft(F)))
    return float(h * (phase[index + 1] - phase[index - 1]) / (2 * dx))


def run_pipeline_C_phase(cfg: ExperimentConfig, out: ArtifactWriter, jobs: int = 1) -> PipelineReport:
    """Kernel phase gradient against d_z S, amplitude growth, and the time integral."""
    sys = cfg.system_config()
    skipped = _one_dimensional(cfg, sys, "C")
    if skipped:
        return skipped
    tol = cfg.tolerances
    ph = cfg.phase
    rep = PipelineReport("C", cfg.scenario)
    smp = relation_anchor(cfg, sys)
    # boxes are centred on the cutoff centres so their edges fall on grid nodes
    y_a, z_a = cfg.chi1().center[0], cfg.chi2().center[0]
    p = ph.patch_half_side
    if ph.bump_half_width >= 0.9 * smp.t:
        raise ConfigError("phase.bump_half_width must stay below 0.9 times the anchor flight time")
    margin = min(ph.bump_half_width + 0.5, 0.95 * smp.t)
    chart = build_chart(
        sys,
        smp.left_x,
        -smp.left_xi,
        smp.t,
        window={"t": (smp.t - margin, smp.t + margin), "y": [(y_a - p - 0.1, y_a + p + 0.1)], "z": [(z_a - p - 0.1, z_a + p + 0.1)]},
        flow_tol=tol.flow,
    )
    st = stationary_point_solve(chart, [y_a], [z_a])
    grad = verify_gradients(chart, st.t, st.y, st.z, fd_step=tol.fd_step, eta_guess=st.eta)
    dzS = float(grad.dzS[0])

    # phase S(x, y) at the stationary time, on a tensor grid and splined
    xs = np.linspace(z_a - p, z_a + p, ph.phase_nodes)
    ys = np.linspace(y_a - p, y_a + p, ph.phase_nodes)
    S_grid = np.zeros((xs.size, ys.size))
    prev = st
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            prev = stationary_point_solve(chart, [y], [x], t_guess=prev.t, eta_guess=prev.eta)
            S_grid[i, j] = prev.action
    spline = RectBivariateSpline(xs, ys, S_grid)

    def phase(X):
        return spline.ev(X[..., 0], X[..., 1])

    hs = cfg.order.half_side
    c1 = cfg.chi1()
    outside = (c1.center[0] + c1.outer + 1.0, c1.center[0] + c1.outer + 2.0)
    jobs_in = [
        (cfg, h, ((z_a - p, z_a + p), (y_a - p, y_a + p)), (z_a - hs, z_a + hs), (y_a, y_a + h / 2), outside)
        for h in cfg.h_ladder
    ]
    results = _map(_phase_job, jobs_in, jobs)
    fields, grads, off = [], [], 0.0
    for (K, row, coords, off_max), h in zip(results, cfg.h_ladder):
        fields.append(GridField([[z_a - p, z_a + p], [y_a - p, y_a + p]], K, h))
        idx = int(np.argmin(np.abs(coords - z_a)))
        grads.append(analytic_phase_gradient(row, coords[1] - coords[0], h, idx))
        off = max(off, off_max)
    rel = [abs(g - dzS) / abs(dzS) for g in grads]
    amp = amplitude_extract(fields, phase, sys.n, ph.lowpass, tol.amplitude_slack)

    # time integral of exp(i S(t) / h) a(t) against its stationary-phase value
    w = ph.bump_half_width
    bump = radial_bump(0.5 * w, w, (0,), st.t)

    guess = {"eta": st.eta}

    def S_one(t):
        sol = shooting_solve(chart, float(t), st.y, st.z, eta_guess=guess["eta"])
        guess["eta"] = sol.eta
        return sol.action

    # one Chebyshev fit of t -> S shared by every h
    S_t = Chebyshev.interpolate(np.vectorize(S_one), 48, domain=[st.t - w, st.t + w])

    def a_t(t):
        return bump(np.atleast_1d(t)[..., None])

    osc = [oscillatory_eval(S_t, a_t, h, (st.t - w, st.t + w), t_star=st.t) for h in cfg.h_ladder]
    osc_err = [abs(r.value - r.stationary_phase) / abs(r.stationary_phase) for r in osc]
    osc_order = float(np.polyfit(np.log(cfg.h_ladder), np.log(osc_err), 1)[0])

    out.csv(
        "C_phase.csv",
        ["h", "phase_gradient", "dzS", "relative_error", "amplitude_sup", "integral_re", "integral_im", "stationary_phase_error"],
        [
            [h, g, dzS, r, s, o.value.real, o.value.imag, e]
            for h, g, r, s, o, e in zip(cfg.h_ladder, grads, rel, amp.sup, osc, osc_err)
        ],
    )
    out.csv(
        "C_phase_grid.csv",
        ["x", "y", "S"],
        [[x, y, S_grid[i, j]] for i, x in enumerate(xs) for j, y in enumerate(ys)],
    )
    out.svg(
        "C_phase_gradient.svg",
        {"kernel phase gradient": (cfg.h_ladder, grads), "d_z S": (cfg.h_ladder, [dzS] * len(grads))},
        title="Local phase gradient at the anchor",
        xlabel="h",
        ylabel="gradient",
        logx=True,
    )
    out.svg(
        "C_amplitude.svg",
        {"sup of demodulated kernel": (amp.h, amp.sup)},
        title="Amplitude growth",
        xlabel="h",
        ylabel="sup",
        logx=True,
        logy=True,
    )
    out.json("C_phase_report.json", {"amplitude": amp.to_dict(), "stationary_time": st.t, "dzS": dzS, "grads": grads})
    rep.details.update(
        {
            "stationary_time": st.t,
            "dzS": dzS,
            "phase_gradients": grads,
            "g_hat": amp.g_hat,
            "stationary_phase_errors": osc_err,
        }
    )
    rep.add(below("phase_gradient", max(rel), tol.phase_gradient))
    rep.add(Check("amplitude_exponent", amp.g_hat, amp.bound + tol.amplitude_slack, "<=", not amp.above_bound))
    rep.add(below("kernel_outside_chi1", off, 1e-10))
    rep.add(above("stationary_phase_order", osc_order, tol.stationary_phase_order))
    return rep.finalize()


# --- pipeline D ----------------------------------------------------------------


def _stone_job(args):
    cfg, h = args
    sys = cfg.system_config()
    disc = make_discretization(sys, h, cfg.grid.L)
    P = assemble_operator(disc, sys)
    eps = cfg.resolvent.stone_eps0 * h
    return stone_formula_check(disc, P, sys.lam, eps, cfg.chi1(), cfg.chi2()), disc.size


def scaling_fit(cfg: ExperimentConfig, sys: SystemConfig):
    r = cfg.resolvent
    return resolvent_h_scaling(
        sys,
        cfg.h_ladder,
        lambda h: r.eps0 * h * h,
        alpha=r.alpha,
        L=damping_box(r.eps0, cfg.grid.L, r.box_reach),
        energy=lambda h: well_energy(sys, h, mass_fraction=r.well_mass_fraction),
    )


def run_pipeline_D_resolvent(cfg: ExperimentConfig, out: ArtifactWriter, jobs: int = 1) -> PipelineReport:
    """Stone identity on the Stone ladder and the weighted resolvent h-scaling."""
    sys = cfg.system_config()
    tol = cfg.tolerances
    rep = PipelineReport("D", cfg.scenario)
    stones = _map(_stone_job, [(cfg, h) for h in cfg.grid.stone_h], jobs)
    out.csv(
        "D_stone.csv",
        ["h", "eps", "grid_size", "deviation", "kernel_max", "relative", "conjugate_defect"],
        [
            [h, cfg.resolvent.stone_eps0 * h, size, s.deviation, s.kernel_max, s.relative, s.conjugate_defect]
            for (s, size), h in zip(stones, cfg.grid.stone_h)
        ],
    )
    rep.add(below("stone_deviation", max(s.deviation for s, _ in stones), tol.stone))

    if sys.n != 1:
        rep.details["scaling"] = "skipped: the weighted resolvent fit runs on one-dimensional grids"
        return rep.finalize()
    trapping = energy_gate(cfg, sys) is not None
    fit = scaling_fit(cfg, sys)
    neg = resolvent_h_scaling(
        sys, cfg.h_ladder, lambda h: cfg.resolvent.negative_eps, alpha=cfg.resolvent.alpha, L=cfg.grid.L
    )
    series = {"eps = eps0 h^2": (fit.h, fit.norms), "fixed eps": (neg.h, neg.norms)}
    rows = [["scaling", h, e, E, v] for h, e, E, v in zip(fit.h, fit.eps, fit.energies, fit.norms)]
    rows += [["negative_control", h, e, E, v] for h, e, E, v in zip(neg.h, neg.eps, neg.energies, neg.norms)]
    rep.details.update({"s_hat": fit.s_hat, "negative_s_hat": neg.s_hat, "trapping": trapping})
    rep.add(below("negative_s_hat", abs(neg.s_hat), tol.resolvent_negative))
    if trapping:
        free_sys = SystemConfig(sys.n, sys.R0, sys.lam, PotentialModel.zero(), sys.mu, sys.h_ladder)
        ref = scaling_fit(cfg, free_sys)
        rows += [["free_reference", h, e, E, v] for h, e, E, v in zip(ref.h, ref.eps, ref.energies, ref.norms)]
        series["free reference"] = (ref.h, ref.norms)
        rep.details["reference_s_hat"] = ref.s_hat
        rep.add(above("s_hat_excess_over_free", fit.s_hat - ref.s_hat, 0.0))
    else:
        lo = tol.resolvent_expected - tol.resolvent_band
        hi = tol.resolvent_expected + tol.resolvent_band
        rep.add(within("s_hat", fit.s_hat, lo, hi))
    out.csv("D_resolvent.csv", ["label", "h", "eps", "energy", "norm"], rows)
    out.json("D_resolvent_report.json", {"scaling": fit.to_dict(), "negative_control": neg.to_dict(), **rep.details})
    out.svg(
        "D_resolvent.svg",
        series,
        title="Weighted resolvent norm against h",
        xlabel="h",
        ylabel="norm",
        logx=True,
        logy=True,
    )
    return rep.finalize()


PIPELINE_FUNCTIONS = {
    "A": run_pipeline_A_action,
    "B": run_pipeline_B_order,
    "C": run_pipeline_C_phase,
    "D": run_pipeline_D_resolvent,
}


def run_pipeline(name: str, cfg: ExperimentConfig, out_dir, jobs: int = 1) -> PipelineReport:
    """Run one pipeline, converting numerical failures into an 'error' report.

    Configuration errors are not caught: they abort the whole run.
    """
    out = ArtifactWriter(Path(out_dir))
    start = time.perf_counter()
    try:
        rep = PIPELINE_FUNCTIONS[name](cfg, out, jobs)
    except ConfigError:
        raise
    except (SpectralFIOError, FloatingPointError, np.linalg.LinAlgError) as err:
        rep = diagnostic_report(name, cfg.scenario, err)
    rep.runtime = time.perf_counter() - start
    rep.artifacts = list(out.paths)
    if cfg.system.n == 1:
        rep.details["dimension_tier"] = "n = 1: analytic sanity tier; the operator statements concern n > 1"
    return rep
