"""Point cloud <-> range image conversion, radial multi-channel slicing,
normalization to [-1, 1] and the flat binary range-image format.

Pixel indexing follows the spherical binning

    col = floor((atan2(y, x) - theta_min) * W / theta_span)
    row = floor((arccos(z / r) - phi_min) * H / phi_span)

and pixel collisions keep the smallest range.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AngularFov, ConfigError, ImageGeometry, PointCloud, spherical, spherical_to_cartesian

# Resolutions used for LiDAR targets and radar conditions in the full-size setting.
LIDAR_SHAPE = (128, 512)
RADAR_SHAPE = (64, 64)
# Small geometries for fast suites and the toy model.
DESK_LIDAR_SHAPE = (32, 128)
DESK_RADAR_SHAPE = (16, 16)
DEFAULT_CHANNELS = 16
MAX_CHANNELS = 32

INVALID_FILL = -1.0


@dataclass(frozen=True)
class ProjectionStats:
    n_input: int = 0
    n_dropped: int = 0
    n_collisions: int = 0

    @property
    def n_in_fov(self) -> int:
        return self.n_input - self.n_dropped


@dataclass(frozen=True)
class RangeImage:
    geometry: ImageGeometry
    ranges: np.ndarray
    valid: np.ndarray
    stats: ProjectionStats = field(default_factory=ProjectionStats, compare=False)

    def __post_init__(self):
        if self.ranges.shape != self.geometry.shape or self.valid.shape != self.geometry.shape:
            raise ValueError("range image arrays do not match geometry")

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class MultiChannelRangeImage:
    """C range images stacked as (C, H, W) arrays, one per radial slab."""

    geometry: ImageGeometry
    ranges: np.ndarray
    valid: np.ndarray
    slice_bounds: np.ndarray
    log_spaced: bool = False
    stats: ProjectionStats = field(default_factory=ProjectionStats, compare=False)

    @property
    def n_channels(self) -> int:
        return self.ranges.shape[0]

    def channel(self, k: int) -> RangeImage:
        return RangeImage(self.geometry, self.ranges[k], self.valid[k])

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class NormalizedImage:
    """Range values mapped affinely to [-1, 1]; invalid pixels hold ``fill``.

    ``values`` may be (H, W) or (C, H, W).
    """

    geometry: ImageGeometry
    values: np.ndarray
    valid: np.ndarray
    fill: float = INVALID_FILL


def _pixel_indices(points: np.ndarray, geom: ImageGeometry):
    fov = geom.fov
    r, theta, phi = spherical(points)
    inside = fov.contains(r, theta, phi)
    col = np.floor((theta - fov.theta_min) * geom.width / fov.theta_span).astype(np.int64)
    row = np.floor((phi - fov.phi_min) * geom.height / fov.phi_span).astype(np.int64)
    # guard float round-off right at the open upper edge
    np.clip(col, 0, geom.width - 1, out=col)
    np.clip(row, 0, geom.height - 1, out=row)
    return r, row, col, inside


def _scatter_nearest(shape, flat_idx, r):
    best = np.full(int(np.prod(shape)), np.inf)
    np.minimum.at(best, flat_idx, r)
    valid = np.isfinite(best)
    ranges = np.where(valid, best, 0.0)
    return ranges.reshape(shape), valid.reshape(shape)


def project(cloud: PointCloud, geom: ImageGeometry) -> RangeImage:
    """Bin the cloud into a range image; nearest surface wins each pixel."""
    r, row, col, inside = _pixel_indices(cloud.points, geom)
    flat = row[inside] * geom.width + col[inside]
    ranges, valid = _scatter_nearest(geom.shape, flat, r[inside])
    n_in = int(inside.sum())
    stats = ProjectionStats(len(cloud), len(cloud) - n_in, n_in - int(valid.sum()))
    return RangeImage(geom, ranges, valid, stats)


def _bin_centers(geom: ImageGeometry):
    fov = geom.fov
    theta = fov.theta_min + (np.arange(geom.width) + 0.5) * fov.theta_span / geom.width
    phi = fov.phi_min + (np.arange(geom.height) + 0.5) * fov.phi_span / geom.height
    return theta, phi


def backproject(img: RangeImage | MultiChannelRangeImage, frame_id: str = "sensor") -> PointCloud:
    """One point per valid pixel, on the bin-center ray at the stored range.

    Multi-channel images are flattened channel by channel.
    """
    theta_c, phi_c = _bin_centers(img.geometry)
    valid = img.valid
    idx = np.nonzero(valid)
    rows, cols = idx[-2], idx[-1]
    pts = spherical_to_cartesian(img.ranges[idx], theta_c[cols], phi_c[rows])
    return PointCloud(pts.reshape(-1, 3), frame_id)


def slice_bounds(fov: AngularFov, channels: int, log_spaced: bool = False) -> np.ndarray:
    if channels < 1:
        raise ConfigError("channel count must be >= 1")
    if log_spaced:
        if fov.r_min <= 0:
            raise ConfigError("log-spaced slicing needs r_min > 0")
        b = np.geomspace(fov.r_min, fov.r_max, channels + 1)
    else:
        b = np.linspace(fov.r_min, fov.r_max, channels + 1)
    b[0], b[-1] = fov.r_min, fov.r_max
    return b


def slice_multichannel(
    cloud: PointCloud, geom: ImageGeometry, channels: int = DEFAULT_CHANNELS, log_spaced: bool = False
) -> MultiChannelRangeImage:
    """Project each radial slab into its own channel (nearest-wins per channel)."""
    bounds = slice_bounds(geom.fov, channels, log_spaced)
    r, row, col, inside = _pixel_indices(cloud.points, geom)
    k = np.clip(np.searchsorted(bounds, r, side="right") - 1, 0, channels - 1)
    shape = (channels,) + geom.shape
    flat = (k * geom.height + row) * geom.width + col
    ranges, valid = _scatter_nearest(shape, flat[inside], r[inside])
    n_in = int(inside.sum())
    stats = ProjectionStats(len(cloud), len(cloud) - n_in, n_in - int(valid.sum()))
    return MultiChannelRangeImage(geom, ranges, valid, bounds, log_spaced, stats)


def retention_ratio(cloud: PointCloud, geom: ImageGeometry, channels: int = 1) -> float:
    """Fraction of in-FOV points that survive as distinct pixels (1.0 if none in FOV)."""
    img = slice_multichannel(cloud, geom, channels)
    n_in = img.stats.n_in_fov
    return 1.0 if n_in == 0 else img.n_valid / n_in


def normalize(img: RangeImage | MultiChannelRangeImage, fill: float = INVALID_FILL) -> NormalizedImage:
    fov = img.geometry.fov
    vals = 2.0 * (img.ranges - fov.r_min) / (fov.r_max - fov.r_min) - 1.0
    vals = np.where(img.valid, np.clip(vals, -1.0, 1.0), fill)
    return NormalizedImage(img.geometry, vals, img.valid.copy(), fill)


def denormalize(n: NormalizedImage, fov: AngularFov | None = None) -> RangeImage | MultiChannelRangeImage:
    fov = fov or n.geometry.fov
    ranges = (np.asarray(n.values, dtype=np.float64) + 1.0) * 0.5 * (fov.r_max - fov.r_min) + fov.r_min
    ranges = np.where(n.valid, np.clip(ranges, fov.r_min, fov.r_max), 0.0)
    geom = ImageGeometry(n.geometry.width, n.geometry.height, fov)
    if ranges.ndim == 3:
        return MultiChannelRangeImage(geom, ranges, n.valid.copy(), slice_bounds(fov, ranges.shape[0]))
    return RangeImage(geom, ranges, n.valid.copy())


def from_values(values: np.ndarray, geom: ImageGeometry, invalid_below: float = -0.95) -> NormalizedImage:
    """Wrap raw model output; pixels below ``invalid_below`` count as empty."""
    values = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    valid = values > invalid_below
    return NormalizedImage(geom, np.where(valid, values, INVALID_FILL), valid)


# --- binary format -------------------------------------------------------------
#
# little-endian; header 72 bytes:
#   0  4s   magic b"RIMG"
#   4  u32  version (1)
#   8  u32  height
#  12  u32  width
#  16  u32  channels C
#  20  u32  flags (bit 0: log-spaced slices)
#  24  6xf64 theta_min, theta_max, phi_min, phi_max, r_min, r_max
# then C*H*W float32 ranges, channel-major then row-major, -1.0 where invalid.

RIMG_MAGIC = b"RIMG"
RIMG_VERSION = 1
_RIMG_HEADER = struct.Struct("<4sIIIII6d")


def encode_range_image(img: RangeImage | MultiChannelRangeImage) -> bytes:
    g = img.geometry
    ranges = img.ranges if img.ranges.ndim == 3 else img.ranges[None]
    valid = img.valid if img.valid.ndim == 3 else img.valid[None]
    flags = 1 if getattr(img, "log_spaced", False) else 0
    head = _RIMG_HEADER.pack(RIMG_MAGIC, RIMG_VERSION, g.height, g.width, ranges.shape[0], flags, *g.fov.as_tuple())
    body = np.where(valid, ranges, -1.0).astype("<f4").tobytes()
    return head + body


def decode_range_image(buf: bytes) -> MultiChannelRangeImage:
    if len(buf) < _RIMG_HEADER.size:
        raise ValueError(f"range image truncated at byte {len(buf)} (header is {_RIMG_HEADER.size})")
    magic, version, h, w, c, flags, *fov = _RIMG_HEADER.unpack_from(buf)
    if magic != RIMG_MAGIC:
        raise ValueError(f"bad magic {magic!r} at byte 0")
    if version != RIMG_VERSION:
        raise ValueError(f"unsupported range image version {version} at byte 4")
    n = c * h * w
    expected = _RIMG_HEADER.size + 4 * n
    if len(buf) != expected:
        raise ValueError(f"range image payload size mismatch: {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_RIMG_HEADER.size).astype(np.float64).reshape(c, h, w)
    geom = ImageGeometry(w, h, AngularFov(*fov))
    valid = data != -1.0
    log_spaced = bool(flags & 1)
    return MultiChannelRangeImage(geom, np.where(valid, data, 0.0), valid, slice_bounds(geom.fov, c, log_spaced), log_spaced)


def write_range_image(path, img) -> None:
    Path(path).write_bytes(encode_range_image(img))


def read_range_image(path) -> MultiChannelRangeImage:
    return decode_range_image(Path(path).read_bytes())
