import json

import numpy as np
import pytest
import yaml

from rangediff.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from rangediff.io import read_lidar_bin, read_ply
from rangediff.projection import read_range_image


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--frames", "3", "--seed", "5"]) == EXIT_OK
    return out


def test_unknown_subcommand(capsys):
    assert main(["frobnicate", "--out", "x"]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_missing_required_flag():
    assert main(["project", "--out", "x"]) == EXIT_USAGE


def test_bad_config_is_usage_error(tmp_path):
    (tmp_path / "c.yaml").write_text("bogus: 1\n")
    assert main(["synth", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_input_is_runtime_error(tmp_path):
    assert main(["train", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_synth_outputs(synth_dir):
    for sub, suf in (("lidar", ".bin"), ("radar", ".bin"), ("maps", ".pmap")):
        assert len(list((synth_dir / sub).glob(f"*{suf}"))) == 3
    run = yaml.safe_load((synth_dir / "run.yaml").read_text())
    assert run["seed"] == 5 and run["command"] == "synth"
    assert (synth_dir / "extrinsic.yaml").exists()


def test_detect_and_preprocess(synth_dir, tmp_path):
    det = tmp_path / "det"
    assert main(["detect", "--in", str(synth_dir), "--out", str(det), "--preset", "standard"]) == EXIT_OK
    assert len(list((det / "radar").glob("*.bin"))) == 3
    pre = tmp_path / "pre"
    assert main(["preprocess", "--in", str(synth_dir), "--out", str(pre)]) == EXIT_OK
    lid = read_lidar_bin(pre / "lidar" / "000000.bin")
    raw = read_lidar_bin(synth_dir / "lidar" / "000000.bin")
    assert 0 < len(lid) < len(raw)


def test_project_channels(synth_dir, tmp_path):
    out = tmp_path / "proj"
    assert main(["project", "--in", str(synth_dir), "--out", str(out), "--channels", "4"]) == EXIT_OK
    img = read_range_image(out / "radar" / "000001.rimg")
    assert img.n_channels == 4
    assert read_range_image(out / "lidar" / "000001.rimg").ranges.shape == (1, 32, 128)


def test_eval_identical_dirs(synth_dir, tmp_path):
    out = tmp_path / "ev"
    d = str(synth_dir / "lidar")
    assert main(["eval", "--pred", d, "--truth", d, "--out", str(out), "--cdf"]) == EXIT_OK
    rows = [json.loads(ln) for ln in (out / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 4 and rows[-1]["frame"] == "MEAN"
    for r in rows:
        assert r["cd"] == 0.0 and r["mhd"] == 0.0 and r["fscore"] == 100.0
    assert len(list((out / "cdf").glob("*.txt"))) == 3
    assert "MEAN" in (out / "metrics.txt").read_text()


def test_export_ply(synth_dir, tmp_path):
    out = tmp_path / "ply"
    assert main(["export", "--in", str(synth_dir / "radar"), "--out", str(out), "--frames", "2"]) == EXIT_OK
    plys = sorted(out.glob("*.ply"))
    assert len(plys) == 2
    np.testing.assert_allclose(read_ply(plys[0]).points, read_lidar_bin(synth_dir / "radar" / "000000.bin").points,
                               atol=1e-6)
