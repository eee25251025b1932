"""Experiment configuration and the scenario registry.

A configuration file is YAML with a ``schema_version`` and a ``scenario``
name; every other section is optional and overrides the scenario defaults.
Unknown keys are rejected at every level.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .hamiltonian import PotentialModel, SystemConfig
from .relations import CutoffFunction, validate_cutoffs

SCHEMA_VERSION = 1
PIPELINES = ("A", "B", "C", "D")
DEFAULT_LADDER = [2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7]


@dataclass
class PotentialSection:
    kind: str = "zero"
    centers: list = field(default_factory=list)
    amplitudes: list = field(default_factory=list)
    widths: list = field(default_factory=list)
    coefficient: float = 0.0
    exponent: float = 1.0

    def build(self) -> PotentialModel:
        return PotentialModel(
            self.kind,
            tuple(tuple(c) for c in self.centers),
            tuple(self.amplitudes),
            tuple(self.widths),
            self.coefficient,
            self.exponent,
        )


@dataclass
class SystemSection:
    n: int = 1
    R0: float = 1.0
    lam: float = 0.5
    mu: float = 1.0
    potential: PotentialSection = field(default_factory=PotentialSection)


@dataclass
class CutoffSection:
    center: list = field(default_factory=lambda: [0.0])
    inner: float = 0.5
    outer: float = 1.0

    def build(self) -> CutoffFunction:
        return CutoffFunction(tuple(self.center), self.inner, self.outer)


@dataclass
class CutoffsSection:
    chi1: CutoffSection = field(default_factory=CutoffSection)
    chi2: CutoffSection = field(default_factory=CutoffSection)


@dataclass
class GridSection:
    L: float = 8.0
    spacing_factor: int = 16  # kernel grids use dx = h / spacing_factor
    stride: int = 8  # field spacing = stride * dx
    stone_h: list = field(default_factory=lambda: [2.0**-3, 2.0**-5])


@dataclass
class ToleranceSection:
    flow: float = 1e-10
    shooting: float = 1e-9
    fd_step: float = 1e-4
    identity: float = 1e-6
    closed_form_action: float = 1e-8
    stationary_time: float = 1e-6
    containment: float = 1e-6
    nondegeneracy: float = 1e-6
    lagrangian: float = 1e-6
    disjointness: float = 0.1
    symplectic: float = 1e-8
    time_reversal: float = 1e-8
    stone: float = 1e-8
    gain_low: float = 0.8
    gain_high: float = 1.2
    negative_gain: float = 0.2
    r_band: float = 0.2
    phase_gradient: float = 0.05
    amplitude_slack: float = 0.3
    stationary_phase_order: float = 0.8
    resolvent_expected: float = 1.0
    resolvent_band: float = 0.3
    resolvent_negative: float = 0.2


@dataclass
class ActionSection:
    grid_points: int = 5
    caps: dict = field(default_factory=lambda: {"t": 3.0, "y": 0.5, "z": 0.5})
    window: Optional[dict] = None
    random_queries: int = 100
    scan_points: int = 9
    stationary_pairs: int = 3
    caustic: bool = False
    caustic_t_max: float = 12.0


@dataclass
class RelationSection:
    n_positions: int = 3
    n_directions: int = 8
    t_max: float = 20.0
    horizon: float = 40.0


@dataclass
class OrderSection:
    mollifier_width: float = 0.25  # Gaussian width in units of h
    window_widths: float = 8.0  # spectral window half-width in mollifier widths
    N_values: list = field(default_factory=lambda: [0, 1, 2])
    negative_shift: float = 0.3
    xi_inner: float = 2.0
    xi_outer: float = 3.0
    half_side: float = 2.0  # kernel box half-side around the cutoff centres


@dataclass
class PhaseSection:
    patch_half_side: float = 0.5
    phase_nodes: int = 9
    lowpass: float = 0.5
    bump_half_width: float = 3.0  # t-amplitude support for the oscillatory check


@dataclass
class ResolventSection:
    eps0: float = 1.0
    alpha: float = 1.0
    stone_eps0: float = 1.0
    negative_eps: float = 0.5
    box_reach: float = 6.0
    well_mass_fraction: float = 0.9


@dataclass
class ExperimentConfig:
    scenario: str
    schema_version: int = SCHEMA_VERSION
    system: SystemSection = field(default_factory=SystemSection)
    cutoffs: CutoffsSection = field(default_factory=CutoffsSection)
    h_ladder: list = field(default_factory=lambda: list(DEFAULT_LADDER))
    grid: GridSection = field(default_factory=GridSection)
    tolerances: ToleranceSection = field(default_factory=ToleranceSection)
    action: ActionSection = field(default_factory=ActionSection)
    relations: RelationSection = field(default_factory=RelationSection)
    order: OrderSection = field(default_factory=OrderSection)
    phase: PhaseSection = field(default_factory=PhaseSection)
    resolvent: ResolventSection = field(default_factory=ResolventSection)
    pipelines: list = field(default_factory=lambda: list(PIPELINES))
    output_dir: str = "runs"
    cache_dir: str = ".spectral_fio_cache"
    seed: int = 0

    # --- derived objects -------------------------------------------------
    def system_config(self) -> SystemConfig:
        s = self.system
        return SystemConfig(s.n, s.R0, s.lam, s.potential.build(), s.mu, tuple(self.h_ladder))

    def chi1(self) -> CutoffFunction:
        return self.cutoffs.chi1.build()

    def chi2(self) -> CutoffFunction:
        return self.cutoffs.chi2.build()

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        bad = [p for p in self.pipelines if p not in PIPELINES]
        if bad:
            raise ConfigError(f"unknown pipelines {bad}")
        for f in dataclasses.fields(self.tolerances):
            if not getattr(self.tolerances, f.name) > 0:
                raise ConfigError(f"tolerance {f.name} must be positive")
        sys = self.system_config()
        chi1, chi2 = self.chi1(), self.chi2()
        if chi1.n != sys.n or chi2.n != sys.n:
            raise ConfigError("cutoff centres must live in R^n")
        validate_cutoffs(chi1, chi2, sys.R0)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _from_dict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys at {where or 'top level'}: {unknown}")
    kwargs = {}
    for key, value in data.items():
        typ = hints[key]
        if dataclasses.is_dataclass(typ):
            kwargs[key] = _from_dict(typ, value, f"{where}.{key}".lstrip("."))
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{where or 'config'}: {err}") from err


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("window", "caps"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    """Overlay ``data`` on the defaults of its scenario and validate."""
    if not isinstance(data, dict) or "scenario" not in data:
        raise ConfigError("config must name a scenario")
    name = data["scenario"]
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    merged = _merge(default_config(name).to_dict(), data)
    return _from_dict(ExperimentConfig, merged, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


# --- scenario registry ------------------------------------------------------


def _scenario_free_1d() -> ExperimentConfig:
    return ExperimentConfig(
        scenario="free_1d",
        system=SystemSection(1, 1.0, 0.5),
        cutoffs=CutoffsSection(CutoffSection([-3.0], 0.5, 1.0), CutoffSection([3.0], 0.5, 1.0)),
    )


def _scenario_bump_1d() -> ExperimentConfig:
    cfg = _scenario_free_1d()
    cfg.scenario = "gaussian_bump_1d"
    cfg.system = SystemSection(1, 1.5, 0.5, potential=PotentialSection("gaussian_bumps", [[0.0]], [0.3], [1.0]))
    return cfg


def _scenario_bump_2d() -> ExperimentConfig:
    cfg = ExperimentConfig(
        scenario="gaussian_bump_2d",
        system=SystemSection(2, 1.5, 0.5, potential=PotentialSection("gaussian_bumps", [[0.0, 0.0]], [0.3], [1.0])),
        cutoffs=CutoffsSection(CutoffSection([-3.0, 0.0], 0.5, 1.0), CutoffSection([3.0, 0.0], 0.5, 1.0)),
        h_ladder=[0.5, 0.25],
    )
    cfg.action.grid_points = 2
    cfg.action.caps = {"t": 2.0, "y": 0.3, "z": 0.3}
    cfg.action.stationary_pairs = 1
    cfg.relations.n_directions = 16
    cfg.grid.L = 4.5
    cfg.grid.stone_h = [0.5]
    return cfg


def _scenario_trapping_1d() -> ExperimentConfig:
    cfg = ExperimentConfig(
        scenario="double_bump_trapping_1d",
        system=SystemSection(
            1, 3.5, 0.5, potential=PotentialSection("gaussian_bumps", [[-2.0], [2.0]], [1.0, 1.0], [1.0, 1.0])
        ),
        cutoffs=CutoffsSection(CutoffSection([-7.0], 0.5, 1.0), CutoffSection([-4.75], 0.4, 0.75)),
    )
    cfg.action.caps = {"t": 1.0, "y": 0.4, "z": 0.3}
    cfg.grid.L = 12.0
    return cfg


SCENARIOS = {
    "free_1d": (_scenario_free_1d, "V = 0 in one dimension; closed-form flow, action and spectrum"),
    "gaussian_bump_1d": (_scenario_bump_1d, "repulsive Gaussian bump 0.3 exp(-x^2); non-trapping at lambda = 0.5"),
    "gaussian_bump_2d": (_scenario_bump_2d, "repulsive Gaussian bump in the plane; relations and charts in 2D"),
    "double_bump_trapping_1d": (
        _scenario_trapping_1d,
        "two unit bumps at +-2 enclosing a well; lambda = 0.5 is a trapping energy",
    ),
}


def default_config(name: str) -> ExperimentConfig:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    return SCENARIOS[name][0]()
