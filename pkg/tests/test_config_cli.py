import json

import numpy as np
import pytest

from polarscan import io
from polarscan.cli import main
from polarscan.config import (
    SEED_ENV,
    ConfigError,
    RunConfig,
    load_run_config,
    load_scene_config,
    run_config_from_dict,
    to_dict,
)

TINY = {
    "grid": {"r_max": 8.0, "n_r": 8, "n_theta": 16, "n_z": 4},
    "bev": {"half_extent": 8.0, "n_xy": 16},
    "n_sectors": 2,
    "dim": 8,
    "state_dim": 4,
}
TINY_SCENE = {"n_points": 200, "n_objects": 2, "r_min": 2.0, "r_max": 7.0, "ground_density": 0.05}


@pytest.fixture
def files(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    (tmp_path / "run.json").write_text(json.dumps(TINY))
    (tmp_path / "scene.json").write_text(json.dumps(TINY_SCENE))
    return tmp_path


def test_defaults_are_consistent():
    cfg = RunConfig()
    assert cfg.grid_spec().r_max <= cfg.bev_spec().x_max
    assert cfg.dtype == np.float64
    assert run_config_from_dict(to_dict(cfg)) == cfg


@pytest.mark.parametrize("doc, match", [
    ({"colour": 1}, "colour"),
    ({"grid": {"n_rr": 3}}, "grid"),
    ({"precision": "f16"}, "precision"),
    ({"n_sectors": 0}, "n_sectors"),
    ({"grid": {"r_max": 40.0}}, "exceeds"),
    ({"grid": {"z_max": 9.0}}, "exceeds"),
    ({"strides": [1, 2]}, "six|6"),
])
def test_config_rejections(doc, match):
    with pytest.raises(ConfigError, match=match):
        run_config_from_dict(doc)


def test_seed_env_override(monkeypatch, files):
    monkeypatch.setenv(SEED_ENV, "42")
    assert load_run_config(files / "run.json").seed == 42
    assert load_scene_config(files / "scene.json").seed == 42
    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(ConfigError):
        load_run_config()


def test_invalid_json(files):
    (files / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_run_config(files / "bad.json")


def test_cli_end_to_end(files, capsys):
    d = files
    assert main(["gen-scene", "--config", str(d / "scene.json"), "--out", str(d / "scan.bin")]) == 0
    assert json.loads((d / "scan.bin.boxes.json").read_text())["boxes"]

    assert main(["voxelize", "--config", str(d / "run.json"), "--input", str(d / "scan.bin"),
                 "--out", str(d / "vox")]) == 0
    assert len(io.read_voxels(d / "vox")) > 0

    assert main(["run-stream", "--config", str(d / "run.json"), "--input", str(d / "scan.bin"),
                 "--input", str(d / "scan.bin"), "--out", str(d / "bev"),
                 "--save-params", str(d / "params")]) == 0
    report = json.loads((d / "bev" / "report.json").read_text())
    assert [s["file"] for s in report["sectors"]][-1] == "bev_r0001_s001.phtn"
    assert io.read_tensor(d / "bev" / "bev_r0001_s001.phtn").shape == (8, 16, 16)

    # reloading the saved bundle reproduces the maps
    assert main(["run-stream", "--config", str(d / "run.json"), "--input", str(d / "scan.bin"),
                 "--input", str(d / "scan.bin"), "--out", str(d / "bev2"),
                 "--params", str(d / "params")]) == 0
    for name in ("bev_r0000_s000.phtn", "bev_r0001_s001.phtn"):
        assert (d / "bev" / name).read_bytes() == (d / "bev2" / name).read_bytes()

    assert main(["run-stream", "--config", str(d / "run.json"), "--input", str(d / "scan.bin"),
                 "--out", str(d / "bevb"), "--mode", "batch", "--precision", "f32"]) == 0
    assert json.loads((d / "bevb" / "report.json").read_text())["config"]["precision"] == "f32"

    assert main(["analyze-distortion", "--config", str(d / "run.json"), "--input", str(d / "scan.bin"),
                 "--samples", "100", "--out", str(d / "dist.csv")]) == 0
    assert (d / "dist.csv").read_text().startswith("plane,std,percent")

    assert main(["analyze-erf", "--config", str(d / "run.json"), "--scene-config", str(d / "scene.json"),
                 "--depth", "2", "--out", str(d / "erf.csv")]) == 0
    assert len((d / "erf.csv").read_text().splitlines()) == 1 + 3 * 3

    assert main(["bench", "--config", str(d / "run.json"), "--scene-config", str(d / "scene.json"),
                 "--sectors", "1,2", "--out", str(d / "bench.json")]) == 0
    rows = json.loads((d / "bench.json").read_text())["results"]
    assert [r["n_sectors"] for r in rows] == [1, 2]
    capsys.readouterr()


def test_cli_errors_return_one(files, capsys):
    d = files
    assert main(["voxelize", "--input", str(d / "missing.bin"), "--out", str(d / "v")]) == 1
    assert "error" in capsys.readouterr().err
    (d / "bad.json").write_text(json.dumps({"grid": {"r_max": 99.0}}))
    assert main(["gen-scene", "--out", str(d / "s.csv")]) == 0
    assert main(["run-stream", "--config", str(d / "bad.json"), "--input", str(d / "s.csv"),
                 "--out", str(d / "o")]) == 1
    assert not (d / "o").exists()
    assert main(["bench", "--config", str(d / "run.json"), "--input", str(d / "s.csv"),
                 "--sectors", "0", "--out", str(d / "b.json")]) == 1
    with pytest.raises(SystemExit):
        main(["no-such-command"])
