"""Domain types shared by every stage: clouds, rigid transforms, FOV/geometry, RNG."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or argument combination."""


class FrameMismatchError(ValueError):
    """Two clouds (or a cloud and a transform) disagree on their frame."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """Ordered (N, 3) float64 points in a named frame.

    The array is stored read-only; every operation returns a new cloud.
    """

    points: np.ndarray
    frame_id: str = "sensor"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise ValueError(f"non-finite point at index {bad}")
        object.__setattr__(self, "points", _readonly(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls, frame_id: str = "sensor") -> "PointCloud":
        return cls(np.zeros((0, 3)), frame_id)

    def subset(self, mask_or_index) -> "PointCloud":
        """Stable selection by boolean mask or ascending index array."""
        return PointCloud(self.points[mask_or_index], self.frame_id)

    def with_frame(self, frame_id: str) -> "PointCloud":
        return PointCloud(self.points, frame_id)

    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def concat(self, other: "PointCloud") -> "PointCloud":
        require_same_frame(self, other)
        return PointCloud(np.vstack([self.points, other.points]), self.frame_id)


def require_same_frame(a: PointCloud, b: PointCloud) -> None:
    if a.frame_id != b.frame_id:
        raise FrameMismatchError(f"frame mismatch: {a.frame_id!r} vs {b.frame_id!r}")


@dataclass(frozen=True)
class RigidTransform:
    """p' = R p + t, mapping ``source_frame`` coordinates into ``target_frame``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source_frame: str | None = None
    target_frame: str | None = None

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64, copy=True)
        t = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        if R.shape != (3, 3):
            raise ConfigError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ConfigError("transform has non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ConfigError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls, source_frame=None, target_frame=None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), source_frame, target_frame)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0), **frames) -> "RigidTransform":
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(R, np.asarray(translation, dtype=float), **frames)

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ first`` (apply ``first``, then ``self``)."""
        R = self.rotation @ first.rotation
        t = self.rotation @ first.translation + self.translation
        return RigidTransform(R, t, first.source_frame, self.target_frame)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation, self.target_frame, self.source_frame)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Map every point through ``t`` keeping order; relabel to the target frame.

    If the transform names a source frame it must match the cloud's frame.
    """
    if t.source_frame is not None and t.source_frame != cloud.frame_id:
        raise FrameMismatchError(
            f"transform expects frame {t.source_frame!r}, cloud is {cloud.frame_id!r}"
        )
    pts = cloud.points @ t.rotation.T + t.translation
    frame = t.target_frame if t.target_frame is not None else cloud.frame_id
    return PointCloud(pts, frame)


@dataclass(frozen=True)
class AngularFov:
    """Azimuth/elevation/range window.

    Azimuth is atan2(y, x); elevation is the polar angle arccos(z / r) from +Z.
    Lower bounds are closed and upper bounds open.
    """

    theta_min: float
    theta_max: float
    phi_min: float
    phi_max: float
    r_min: float
    r_max: float

    def __post_init__(self):
        vals = (self.theta_min, self.theta_max, self.phi_min, self.phi_max, self.r_min, self.r_max)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError("FOV bounds must be finite")
        if not self.theta_min < self.theta_max:
            raise ConfigError("theta_min must be < theta_max")
        if not self.phi_min < self.phi_max:
            raise ConfigError("phi_min must be < phi_max")
        if not 0.0 <= self.r_min < self.r_max:
            raise ConfigError("need 0 <= r_min < r_max")

    @property
    def theta_span(self) -> float:
        return self.theta_max - self.theta_min

    @property
    def phi_span(self) -> float:
        return self.phi_max - self.phi_min

    def as_tuple(self) -> tuple:
        return (self.theta_min, self.theta_max, self.phi_min, self.phi_max, self.r_min, self.r_max)

    def contains(self, r, theta, phi) -> np.ndarray:
        return (
            (r >= self.r_min) & (r < self.r_max)
            & (theta >= self.theta_min) & (theta < self.theta_max)
            & (phi >= self.phi_min) & (phi < self.phi_max)
        )


# Full sphere in azimuth/elevation, used by the range-image examples.
FULL_SPHERE = AngularFov(-np.pi, np.pi, 0.0, np.pi, 0.0, 100.0)


@dataclass(frozen=True)
class ImageGeometry:
    width: int
    height: int
    fov: AngularFov

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ConfigError("image width and height must be >= 1")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def spherical(points: np.ndarray):
    """Return (r, theta, phi) arrays for an (N, 3) point array.

    phi is 0 for the origin (r = 0) to keep things finite.
    """
    r = np.linalg.norm(points, axis=1)
    theta = np.arctan2(points[:, 1], points[:, 0])
    with np.errstate(invalid="ignore", divide="ignore"):
        cosphi = np.where(r > 0, points[:, 2] / np.where(r > 0, r, 1.0), 1.0)
    phi = np.arccos(np.clip(cosphi, -1.0, 1.0))
    return r, theta, phi


def spherical_to_cartesian(r, theta, phi) -> np.ndarray:
    r, theta, phi = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float), np.asarray(phi, float))
    sp = np.sin(phi)
    return np.stack([r * sp * np.cos(theta), r * sp * np.sin(theta), r * np.cos(phi)], axis=-1)


class SeededRng:
    """PCG64 stream bound to a 64-bit seed.

    numpy's PCG64 is specified bit-exactly, so a given seed yields the same
    stream on every platform. ``child(k)`` derives independent streams for
    parallel workers without touching this one.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, key: int) -> "SeededRng":
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        return SeededRng(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def __getattr__(self, name):
        # delegate normal/uniform/integers/... to the generator
        return getattr(self.generator, name)


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return SeededRng(0 if rng is None else int(rng)).generator
