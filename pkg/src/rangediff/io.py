"""File readers/writers and the pipeline configuration."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import AngularFov, ConfigError, PointCloud
from .synth import DESK_FOV


def read_lidar_bin(path, frame_id: str = "lidar") -> PointCloud:
    """Little-endian float32 records (x, y, z, intensity); intensity is dropped."""
    buf = Path(path).read_bytes()
    if len(buf) % 16:
        raise ValueError(f"{path}: {len(buf)} bytes is not a multiple of 16 (record stride); "
                         f"truncated record at byte {len(buf) - len(buf) % 16}")
    rec = np.frombuffer(buf, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(rec[:, :3]).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{path}: non-finite coordinate in record {i} at byte {16 * i}")
    return PointCloud(rec[:, :3].astype(np.float64), frame_id)


def write_lidar_bin(cloud: PointCloud, path, intensity=None) -> None:
    rec = np.zeros((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    if intensity is not None:
        rec[:, 3] = intensity
    Path(path).write_bytes(rec.tobytes())


def write_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with float x, y, z vertex properties."""
    lines = ["ply", "format ascii 1.0", f"comment frame {cloud.frame_id}",
             f"element vertex {len(cloud)}", "property float x", "property float y", "property float z", "end_header"]
    body = "\n".join(f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in cloud.points.astype(np.float32))
    Path(path).write_text("\n".join(lines) + "\n" + body + ("\n" if len(cloud) else ""))


def read_ply(path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: line 1: missing 'ply' magic")
    n = None
    props = []
    frame = "sensor"
    end = None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1:2] != ["ascii"]:
            raise ValueError(f"{path}: line {i}: only ASCII PLY is supported")
        elif tok[0] == "comment" and tok[1:2] == ["frame"] and len(tok) > 2:
            frame = tok[2]
        elif tok[0] == "element":
            if tok[1] != "vertex" or n is not None:
                raise ValueError(f"{path}: line {i}: unsupported element {tok[1]!r}")
            n = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            end = i
            break
    if end is None or n is None:
        raise ValueError(f"{path}: malformed header (no vertex element or end_header)")
    try:
        cols = [props.index(a) for a in "xyz"]
    except ValueError:
        raise ValueError(f"{path}: vertex element lacks x/y/z properties") from None
    rows = [ln for ln in lines[end:] if ln.strip()]
    if len(rows) != n:
        raise ValueError(f"{path}: header declares {n} vertices, found {len(rows)} (line {end + len(rows) + 1})")
    pts = np.zeros((n, 3))
    for j, ln in enumerate(rows):
        vals = ln.split()
        if len(vals) != len(props):
            raise ValueError(f"{path}: line {end + j + 1}: expected {len(props)} values")
        pts[j] = [float(vals[c]) for c in cols]
    return PointCloud(pts, frame)


# --- configuration ---------------------------------------------------------------


@dataclass
class FovConfig:
    theta_min: float = DESK_FOV.theta_min
    theta_max: float = DESK_FOV.theta_max
    phi_min: float = DESK_FOV.phi_min
    phi_max: float = DESK_FOV.phi_max
    r_min: float = DESK_FOV.r_min
    r_max: float = DESK_FOV.r_max

    def build(self) -> AngularFov:
        return AngularFov(**dataclasses.asdict(self))


@dataclass
class ProjectionConfig:
    lidar_shape: list = field(default_factory=lambda: [32, 128])
    radar_shape: list = field(default_factory=lambda: [16, 16])
    channels: int = 16
    log_spaced: bool = False


@dataclass
class SynthConfig:
    scenes: int = 64
    radar_rays: int = 300
    penetration_prob: float = 0.3
    range_jitter: float = 0.1
    ghost_rate: float = 0.05


@dataclass
class PreprocessConfig:
    dist_tol: float = 0.1
    angle_tol_deg: float = 15.0
    ransac_iterations: int = 200
    min_inlier_frac: float = 0.05
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 5
    max_skew_s: float = 0.05


@dataclass
class CfarConfig:
    guard: int = 2
    train: int = 8
    k_rank: float = 0.75
    alpha: float = 1e-3
    window: str = "range"


@dataclass
class DiffusionConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    steps: int = 32


@dataclass
class TrainSection:
    lr: float = 2e-3
    steps: int = 2000
    batch_size: int = 8
    p_mean: float = -1.2
    p_std: float = 1.2
    lambda_m: float = 1.0
    lambda_p: float = 0.5
    lambda_c: float = 1.0
    grad_clip: float = 1.0


@dataclass
class MetricConfig:
    tau: float = 0.25
    invalid_below: float = -0.95


@dataclass
class PipelineConfig:
    seed: int = 0
    fov: FovConfig = field(default_factory=FovConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    cfar: CfarConfig = field(default_factory=CfarConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainSection = field(default_factory=TrainSection)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def validate(self) -> "PipelineConfig":
        self.fov.build()
        if not 1 <= self.projection.channels <= 32:
            raise ConfigError("projection.channels must be in 1..32")
        for name in ("lidar_shape", "radar_shape"):
            shp = getattr(self.projection, name)
            if len(shp) != 2 or min(shp) < 1:
                raise ConfigError(f"projection.{name} must be two positive integers")
        if self.diffusion.steps < 1 or not 0 < self.diffusion.sigma_min < self.diffusion.sigma_max:
            raise ConfigError("invalid diffusion schedule")
        if self.metrics.tau <= 0:
            raise ConfigError("metrics.tau must be positive")
        if self.cfar.window not in ("range", "2d"):
            raise ConfigError("cfar.window must be 'range' or '2d'")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, val in data.items():
        f = known[key]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), val, f"{where}{key}.")
        elif isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{where}{key}: expected true/false")
            kwargs[key] = val
        elif isinstance(default, (int, float)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{where}{key}: expected a number, got {val!r}")
            if isinstance(default, int) and not isinstance(val, int):
                raise ConfigError(f"{where}{key}: expected an integer, got {val!r}")
            kwargs[key] = type(default)(val)
        elif type(val) is not type(default):
            raise ConfigError(f"{where}{key}: expected {type(default).__name__}, got {val!r}")
        else:
            kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "").validate()


def load_config(path) -> PipelineConfig:
    """Read a YAML config; missing keys take defaults, unknown keys are errors."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(data)


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


# --- frame association -----------------------------------------------------------


def associate(t_lidar, t_radar, max_skew: float = 0.05):
    """Pair each radar timestamp with the nearest LiDAR timestamp.

    Returns (pairs as (radar_idx, lidar_idx), number dropped for exceeding ``max_skew``).
    """
    tl = np.asarray(t_lidar, dtype=np.float64)
    order = np.argsort(tl, kind="stable")
    tl_sorted = tl[order]
    pairs, dropped = [], 0
    for i, t in enumerate(np.asarray(t_radar, dtype=np.float64)):
        j = int(np.searchsorted(tl_sorted, t))
        cands = [k for k in (j - 1, j) if 0 <= k < len(tl_sorted)]
        if not cands:
            dropped += 1
            continue
        k = min(cands, key=lambda k: (abs(tl_sorted[k] - t), k))
        if abs(tl_sorted[k] - t) > max_skew:
            dropped += 1
        else:
            pairs.append((i, int(order[k])))
    return pairs, dropped


_FRAME_RE = re.compile(r"(\d+)")


def frame_index(path) -> int:
    m = _FRAME_RE.findall(Path(path).stem)
    return int(m[-1]) if m else -1
