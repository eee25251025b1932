import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from spectral_fio import __version__
from spectral_fio.cli import main
from spectral_fio.config import SCENARIOS, default_config
from spectral_fio.io.reporting import RunManifest
from spectral_fio.pipelines import run_pipeline

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in SCENARIOS:
        assert name in out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_validate_config_prints_resolved(tmp_path, capsys):
    p = write_config(tmp_path / "c.yaml", {"scenario": "free_1d", "seed": 7})
    assert main(["validate-config", "--config", str(p)]) == 0
    resolved = yaml.safe_load(capsys.readouterr().out)
    assert resolved["seed"] == 7 and resolved["system"]["lam"] == 0.5


@pytest.mark.parametrize(
    "data", [{"scenario": "free_1d", "unknown": 1}, {"scenario": "free_1d", "tolerances": {"stone": -1}}]
)
def test_bad_config_exits_2(tmp_path, data, capsys):
    p = write_config(tmp_path / "bad.yaml", data)
    assert main(["validate-config", "--config", str(p)]) == 2
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_clean_cache(tmp_path, capsys):
    cache = tmp_path / "cache"
    cache.mkdir()
    (cache / "k.npz").write_bytes(b"0")
    (cache / "k.json").write_text("{}")
    (cache / "keep.txt").write_text("x")
    assert main(["clean-cache", "--cache-dir", str(cache)]) == 0
    assert "removed 2 files" in capsys.readouterr().out
    assert [p.name for p in cache.iterdir()] == ["keep.txt"]


@pytest.fixture(scope="module")
def free_runs(tmp_path_factory):
    """Pipeline A on free_1d, twice, into separate directories."""
    roots = []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"run{i}")
        code = main(["run", "--scenario", "free_1d", "--pipeline", "A", "--out", str(out)])
        roots.append((out, code))
    return roots


def test_run_pipeline_a_passes_and_manifest_verifies(free_runs):
    out, code = free_runs[0]
    assert code == 0
    man = RunManifest.read(out / "manifest.json")
    assert man.pipelines == {"A": "pass"}
    assert man.scenario == "free_1d" and man.tool_version == __version__
    assert man.verify(out) == []
    names = {e["path"] for e in man.artifacts}
    assert {"config.yaml", "report_A.json", "A_gradients.csv", "A_free_action.csv", "A_phase_lagrangian.csv"} <= names
    report = json.loads((out / "report_A.json").read_text())
    assert report["status"] == "pass"
    assert all(c["passed"] for c in report["checks"])


def test_runs_are_byte_identical(free_runs):
    (a, _), (b, _) = free_runs
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert (a / "config.yaml").read_bytes() == (b / "config.yaml").read_bytes()


def test_caustic_lens_reports_singular_jacobian(tmp_path, capsys):
    out = tmp_path / "caustic"
    code = main(["run", "--config", str(CONFIGS / "caustic_lens_2d.yaml"), "--out", str(out)])
    assert code == 3
    report = json.loads((out / "report_A.json").read_text())
    assert report["status"] == "error"
    assert report["details"]["error"] == "singular_jacobian"
    # the flow and relation checks that ran before the chart still appear
    assert {c["name"] for c in report["checks"]} >= {"energy_drift", "relation_distance"}
    assert "ERROR" in capsys.readouterr().out
    assert RunManifest.read(out / "manifest.json").verify(out) == []


def test_trapping_energy_skips_grid_pipelines(tmp_path):
    cfg = default_config("double_bump_trapping_1d")
    cfg.cache_dir = str(tmp_path / "cache")
    for name in ("B", "C"):
        rep = run_pipeline(name, cfg, tmp_path)
        assert rep.status == "skipped"
        assert "resolvent bound not certified" in rep.reason
        assert rep.ok


def test_two_dimensional_scenario_skips_kernel_pipelines(tmp_path):
    cfg = default_config("gaussian_bump_2d")
    rep = run_pipeline("B", cfg, tmp_path)
    assert rep.status == "skipped" and "one-dimensional" in rep.reason


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spectral_fio", "list-scenarios"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "free_1d" in res.stdout
