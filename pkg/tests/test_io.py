import struct

import numpy as np
import pytest
import yaml

from rangediff.core import ConfigError, PointCloud
from rangediff.io import (
    PipelineConfig,
    associate,
    config_from_dict,
    dump_config,
    frame_index,
    load_config,
    read_lidar_bin,
    read_ply,
    write_lidar_bin,
    write_ply,
)


def test_lidar_bin_two_points(tmp_path):
    f = tmp_path / "a.bin"
    f.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, -4, 5.5, 6, 0.9))
    assert f.stat().st_size == 32
    c = read_lidar_bin(f)
    np.testing.assert_array_equal(c.points, [[1, 2, 3], [-4, 5.5, 6]])
    assert c.frame_id == "lidar"


def test_lidar_bin_empty(tmp_path):
    f = tmp_path / "e.bin"
    f.write_bytes(b"")
    assert len(read_lidar_bin(f)) == 0


def test_lidar_bin_stride_error(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(bytes(17))
    with pytest.raises(ValueError, match="byte 16"):
        read_lidar_bin(f)


def test_lidar_bin_non_finite(tmp_path):
    f = tmp_path / "nan.bin"
    f.write_bytes(struct.pack("<8f", 1, 2, 3, 0, np.nan, 0, 0, 0))
    with pytest.raises(ValueError, match="record 1 at byte 16"):
        read_lidar_bin(f)


def test_lidar_bin_roundtrip(tmp_path, rng):
    c = PointCloud(rng.uniform(-5, 5, (100, 3)).astype(np.float32).astype(np.float64))
    write_lidar_bin(c, tmp_path / "r.bin", intensity=rng.random(100))
    np.testing.assert_array_equal(read_lidar_bin(tmp_path / "r.bin").points, c.points)


def test_ply_roundtrip(tmp_path, rng):
    c = PointCloud(rng.uniform(-1, 1, (200, 3)), "radar")
    write_ply(c, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    assert back.frame_id == "radar"
    np.testing.assert_allclose(back.points, c.points, atol=1e-6)


def test_ply_empty(tmp_path):
    write_ply(PointCloud.empty(), tmp_path / "e.ply")
    assert "element vertex 0" in (tmp_path / "e.ply").read_text()
    assert len(read_ply(tmp_path / "e.ply")) == 0


def test_ply_vertex_count_mismatch(tmp_path, rng):
    write_ply(PointCloud(rng.random((5, 3))), tmp_path / "c.ply")
    lines = (tmp_path / "c.ply").read_text().splitlines()
    (tmp_path / "short.ply").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError, match="declares 5 vertices, found 4"):
        read_ply(tmp_path / "short.ply")


@pytest.mark.parametrize(
    "text,match",
    [
        ("not a ply\n", "magic"),
        ("ply\nformat binary_little_endian 1.0\nend_header\n", "ASCII"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n", "x/y/z"),
        ("ply\nformat ascii 1.0\nproperty float x\n", "malformed"),
    ],
)
def test_ply_malformed(tmp_path, text, match):
    (tmp_path / "m.ply").write_text(text)
    with pytest.raises(ValueError, match=match):
        read_ply(tmp_path / "m.ply")


def test_ply_extra_properties(tmp_path):
    (tmp_path / "i.ply").write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float intensity\nproperty float x\n"
        "property float y\nproperty float z\nend_header\n9 1 2 3\n")
    np.testing.assert_array_equal(read_ply(tmp_path / "i.ply").points, [[1, 2, 3]])


# --- configuration -------------------------------------------------------------


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.projection.channels == 16
    assert cfg.cfar.alpha == 1e-3 and cfg.metrics.tau == 0.25
    assert (cfg.train.lambda_m, cfg.train.lambda_p, cfg.train.lambda_c) == (1.0, 0.5, 1.0)
    assert (cfg.diffusion.sigma_min, cfg.diffusion.sigma_max, cfg.diffusion.rho, cfg.diffusion.steps) == (0.002, 80.0, 7.0, 32)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="train.learning_rate"):
        config_from_dict({"train": {"learning_rate": 0.1}})


@pytest.mark.parametrize(
    "data",
    [
        {"train": {"steps": "many"}},
        {"train": {"steps": 2.5}},
        {"projection": {"log_spaced": 1}},
        {"projection": {"channels": 64}},
        {"projection": {"lidar_shape": True}},
        {"cfar": {"window": "circle"}},
        {"metrics": {"tau": 0}},
        {"fov": {"r_min": 5.0, "r_max": 1.0}},
        {"fov": 3},
    ],
)
def test_bad_values(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_int_accepted_for_float():
    assert config_from_dict({"train": {"lr": 1}}).train.lr == 1.0


def test_yaml_roundtrip(tmp_path):
    cfg = config_from_dict({"seed": 7, "projection": {"channels": 8}, "train": {"steps": 10}})
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg


def test_partial_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"metrics": {"tau": 0.5}}))
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.metrics.tau == 0.5 and cfg.seed == PipelineConfig().seed


def test_bad_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


# --- association ----------------------------------------------------------------


def test_associate_nearest_with_skew():
    lidar = [0.0, 0.1, 0.2, 0.3]
    radar = [0.01, 0.14, 0.26, 0.9]
    pairs, dropped = associate(lidar, radar, 0.05)
    assert pairs == [(0, 0), (1, 1), (2, 3)]
    assert dropped == 1


def test_associate_unsorted_and_empty():
    pairs, dropped = associate([0.3, 0.0, 0.1], [0.02, 0.29], 0.05)
    assert pairs == [(0, 1), (1, 0)] and dropped == 0
    assert associate([], [0.1, 0.2]) == ([], 2)


def test_frame_index():
    assert frame_index("out/lidar/000042.bin") == 42
    assert frame_index("scan.bin") == -1
