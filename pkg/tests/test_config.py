import pytest
import yaml

from spectral_fio.config import (
    SCENARIOS,
    config_from_dict,
    default_config,
    dump_config,
    load_config,
)
from spectral_fio.errors import ConfigError


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenarios_validate_and_round_trip(name, tmp_path):
    cfg = default_config(name).validate()
    path = tmp_path / "cfg.yaml"
    dump_config(cfg, path)
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.digest() == cfg.digest()


def test_overrides_merge_onto_scenario_defaults():
    cfg = config_from_dict({"scenario": "free_1d", "system": {"lam": 0.8}, "tolerances": {"stone": 1e-9}})
    base = default_config("free_1d")
    assert cfg.system.lam == 0.8
    assert cfg.system.R0 == base.system.R0
    assert cfg.tolerances.stone == 1e-9
    assert cfg.tolerances.identity == base.tolerances.identity
    assert cfg.digest() != base.digest()


@pytest.mark.parametrize(
    "data",
    [
        {"scenario": "free_1d", "bogus": 1},
        {"scenario": "free_1d", "system": {"lamda": 0.5}},
        {"scenario": "nowhere"},
        {"system": {"lam": 0.5}},
        {"scenario": "free_1d", "schema_version": 2},
        {"scenario": "free_1d", "pipelines": ["A", "E"]},
        {"scenario": "free_1d", "tolerances": {"stone": 0.0}},
        {"scenario": "free_1d", "cutoffs": {"chi1": {"center": [0.0], "inner": 0.5, "outer": 1.0}}},
        {"scenario": "free_1d", "cutoffs": {"chi1": {"center": [-3.0, 0.0], "inner": 0.5, "outer": 1.0}}},
        {"scenario": "free_1d", "system": {"potential": {"kind": "cubic"}}},
    ],
)
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_unreadable_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("scenario: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_shipped_config_files_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert files
    for f in files:
        cfg = load_config(f)
        assert cfg.scenario == yaml.safe_load(f.read_text())["scenario"]


def test_system_config_matches_sections():
    cfg = default_config("double_bump_trapping_1d")
    sys = cfg.system_config()
    assert sys.n == 1 and sys.lam == 0.5 and sys.R0 == 3.5
    assert sys.V([[0.0]])[0] == pytest.approx(2 * 2.718281828459045**-4, rel=1e-12)
    assert list(sys.h_ladder) == cfg.h_ladder
