from __future__ import annotations

import json

import pytest
import yaml

from waveprobe.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from waveprobe.io import read_csv

SMALL = {
    "grid": {"nx": 20, "T": 2.0},
    "probes": {"lambdas": [8.0, 16.0, 32.0], "directions": 2, "y_spacing": 1.0, "n_random": 8},
    "recon": {"R": 3.0, "mode": "oracle"},
    "carleman": {"members": 2, "lambdas": [8.0, 16.0]},
    "potentials": {"scales": [0.1]},
    "lightray": {"directions": 2, "spacing": 0.1},
}


def write_cfg(tmp_path, **over):
    data = {**SMALL, **over}
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p)


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_simulate_deterministic(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a), "--workers", "1"]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", str(b), "--workers", "2"]) == EXIT_OK
    fa, fb = manifest(a)["stages"]["simulate"]["files"], manifest(b)["stages"]["simulate"]["files"]
    assert fa == fb
    assert capsys.readouterr().out.strip().endswith("b")


def test_resume_and_force(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["carleman", "--config", cfg, "--out", str(out)]) == EXIT_OK
    first = manifest(out)
    assert main(["carleman", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert manifest(out) == first
    assert main(["carleman", "--config", cfg, "--out", str(out), "--force"]) == EXIT_OK
    again = manifest(out)
    assert again["stages"]["carleman"]["files"] == first["stages"]["carleman"]["files"]
    assert again["stages"]["carleman"]["seconds"] != first["stages"]["carleman"]["seconds"]


def test_seed_changes_digest(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", cfg, "--out", str(a)])
    main(["simulate", "--config", cfg, "--out", str(b), "--seed", "7"])
    assert manifest(a)["config_digest"] != manifest(b)["config_digest"]


def test_env_output_root(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path)
    monkeypatch.setenv("WAVEPROBE_OUTPUT_ROOT", str(tmp_path / "envroot"))
    assert main(["simulate", "--config", cfg]) == EXIT_OK
    runs = list((tmp_path / "envroot").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("simulate-")
    assert manifest(runs[0])["output_root_source"] == "env"


def test_stability_zero_scale(tmp_path):
    cfg = write_cfg(tmp_path, potentials={"scales": [0.0]})
    out = tmp_path / "s"
    assert main(["stability", "--config", cfg, "--out", str(out)]) == EXIT_OK
    csvs = [f for f in manifest(out)["stages"]["stability"]["files"] if f.endswith(".csv")]
    head, rows = read_csv(out / csvs[0])
    assert len(rows) == 1 and float(rows[0][0]) == 0.0


def test_config_errors(tmp_path, capsys):
    bad = write_cfg(tmp_path, grid={"nx": 4})
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "config-invalid" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert main(["simulate", "--workers", "0", "--out", str(tmp_path / "y")]) == EXIT_CONFIG
    assert main(["bogus"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG


def test_stage_failure(tmp_path, capsys):
    cfg = write_cfg(tmp_path, potentials={"scales": [0.1], "perturbation": {"kind": "constant", "value": 1.0}})
    assert main(["stability", "--config", cfg, "--out", str(tmp_path / "f")]) == EXIT_STAGE
    assert "stage-failure" in capsys.readouterr().err


def test_config_reference(capsys):
    assert main(["config-reference"]) == EXIT_OK
    assert "grid:" in capsys.readouterr().out


@pytest.mark.parametrize("name", ["probe", "identity", "lightray", "reconstruct"])
def test_other_subcommands_run(tmp_path, name):
    cfg = write_cfg(tmp_path)
    out = tmp_path / name
    assert main([name, "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert manifest(out)["stages"][name]["files"]
