"""Box-world scenes: ray-cast a dense LiDAR scan and a sparse, noisy radar scan
of random rooms, then build paired (LiDAR image, radar stack) training data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AngularFov, ImageGeometry, PointCloud, RigidTransform, SeededRng, apply_transform, spherical_to_cartesian
from .preprocess import PreprocessParams, preprocess_pair
from .projection import DEFAULT_CHANNELS, normalize, project, slice_multichannel

DESK_FOV = AngularFov(-np.pi / 3, np.pi / 3, np.pi / 2 - np.pi / 12, np.pi / 2 + np.pi / 12, 0.5, 10.0)
# LiDAR mounted 10 cm above the radar, axes aligned.
LIDAR_TO_RADAR = RigidTransform(np.eye(3), (0.0, 0.0, 0.1), "lidar", "radar")


@dataclass
class SynthParams:
    fov: AngularFov = DESK_FOV
    lidar_shape: tuple = (32, 128)
    radar_shape: tuple = (16, 16)
    channels: int = DEFAULT_CHANNELS
    radar_rays: int = 300
    penetration_prob: float = 0.3
    range_jitter: float = 0.1
    ghost_rate: float = 0.05
    invisible_prob: float = 0.5
    sensor_height: float = 1.0

    @property
    def lidar_geom(self):
        return ImageGeometry(self.lidar_shape[1], self.lidar_shape[0], self.fov)

    @property
    def radar_geom(self):
        return ImageGeometry(self.radar_shape[1], self.radar_shape[0], self.fov)


@dataclass
class Scene:
    room: np.ndarray  # (2, 3) interior bounds
    boxes: np.ndarray  # (K, 2, 3)
    radar_visible: np.ndarray  # (K,) bool
    lidar: PointCloud  # lidar frame
    radar: PointCloud  # radar frame
    n_ghosts: int = 0
    extrinsic: RigidTransform = field(default=LIDAR_TO_RADAR)


def _slab(dirs, lo, hi, origin):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo[None, :] - origin) * inv
        t2 = (hi[None, :] - origin) * inv
    t1 = np.nan_to_num(t1, nan=-np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    return np.minimum(t1, t2).max(axis=1), np.maximum(t1, t2).min(axis=1)


def cast(dirs, room, boxes, origin=np.zeros(3)):
    """Surface hits along unit rays from ``origin``.

    Returns (t, kind) of shape (N, K+1): entry distances into each box (inf if
    missed) and the room-wall exit distance last; kind is the surface id
    (0..K-1 boxes, K room walls).
    """
    n = len(dirs)
    t = np.full((n, len(boxes) + 1), np.inf)
    for k, (lo, hi) in enumerate(boxes):
        tmin, tmax = _slab(dirs, lo, hi, origin)
        hit = (tmax >= tmin) & (tmin > 1e-9)
        t[hit, k] = tmin[hit]
    _, room_exit = _slab(dirs, room[0], room[1], origin)
    t[:, -1] = room_exit
    return t


def _room_face(points, room, tol=1e-6):
    """'floor', 'ceiling' or 'wall' for points on the room boundary."""
    z = points[:, 2]
    return np.where(np.abs(z - room[0, 2]) < tol, "floor", np.where(np.abs(z - room[1, 2]) < tol, "ceiling", "wall"))


def random_directions(rng, n, fov: AngularFov):
    theta = rng.uniform(fov.theta_min, fov.theta_max, n)
    phi = np.arccos(rng.uniform(np.cos(fov.phi_max), np.cos(fov.phi_min), n))
    return spherical_to_cartesian(1.0, theta, phi), theta, phi


def make_scene(rng: np.random.Generator, p: SynthParams) -> Scene:
    h = p.sensor_height
    depth = rng.uniform(6.0, 9.0)
    half_w = rng.uniform(2.5, 4.0)
    ceil = rng.uniform(2.6, 3.2)
    room = np.array([[-1.0, -half_w, -h], [depth, half_w, ceil - h]])

    boxes, visible = [], []
    for _ in range(rng.integers(2, 5)):
        sx, sy = rng.uniform(0.4, 1.2, 2)
        sz = rng.uniform(0.5, 1.8)
        cx = rng.uniform(2.0, depth - 1.0)
        cy = rng.uniform(-half_w + 0.6, half_w - 0.6)
        boxes.append([[cx - sx / 2, cy - sy / 2, -h], [cx + sx / 2, cy + sy / 2, -h + sz]])
        visible.append(True)
    # bench: a thin slab on short legs we do not model
    bx, by = rng.uniform(1.5, depth - 1.5), rng.uniform(-half_w + 1.0, half_w - 1.0)
    boxes.append([[bx - 0.75, by - 0.2, -h + 0.42], [bx + 0.75, by + 0.2, -h + 0.47]])
    visible.append(True)
    if rng.random() < p.invisible_prob:
        visible[0] = False  # low-reflectivity object: LiDAR sees it, radar does not
    boxes = np.array(boxes)
    visible = np.array(visible)

    # LiDAR: one ray per image bin, jittered within the bin, from the LiDAR origin
    H, W = p.lidar_shape
    fov = p.fov
    jit = rng.uniform(0.05, 0.95, size=(2, H, W))
    theta = fov.theta_min + (np.arange(W)[None, :] + jit[0]) * fov.theta_span / W
    phi = fov.phi_min + (np.arange(H)[:, None] + jit[1]) * fov.phi_span / H
    dirs = spherical_to_cartesian(1.0, theta.ravel(), phi.ravel())
    lidar_origin = LIDAR_TO_RADAR.translation
    t = cast(dirs, room, boxes, lidar_origin)
    first = t.min(axis=1)
    lidar_pts = dirs * first[:, None]  # relative to the LiDAR origin == lidar frame
    ok = (first < fov.r_max) & (first >= fov.r_min)
    lidar = PointCloud(lidar_pts[ok], "lidar")

    # radar: sparse rays; floors, ceilings and invisible boxes give no return
    dirs_r, _, _ = random_directions(rng, p.radar_rays, fov)
    t = cast(dirs_r, room, boxes, np.zeros(3))
    reflect = np.append(visible, True)
    order = np.argsort(t, axis=1)
    pts = []
    for i in range(len(dirs_r)):
        hits = [(t[i, k], k) for k in order[i] if np.isfinite(t[i, k])]
        returns = 0
        for dist, k in hits:
            if k == len(boxes):
                face = _room_face((dirs_r[i] * dist)[None], room)[0]
                if face != "wall":
                    break
            elif not reflect[k]:
                continue
            pts.append(dirs_r[i] * (dist + rng.normal(0.0, p.range_jitter)))
            returns += 1
            if returns >= 2 or rng.random() >= p.penetration_prob:
                break
    pts = np.array(pts).reshape(-1, 3)
    n_ghost = int(rng.binomial(max(len(pts), 1), p.ghost_rate))
    gd, _, _ = random_directions(rng, n_ghost, fov)
    gr = rng.uniform(fov.r_min, fov.r_max, n_ghost)
    radar_pts = np.vstack([pts, gd * gr[:, None]])
    radar = PointCloud(radar_pts, "radar")
    return Scene(room, boxes, visible, lidar, radar, n_ghost)


@dataclass
class PairedDataset:
    x0: np.ndarray  # (N, H, W) normalized LiDAR images
    valid: np.ndarray  # (N, H, W)
    cond: np.ndarray  # (N, C, h, w) normalized radar stacks
    scenes: list
    lidar_geom: ImageGeometry
    radar_geom: ImageGeometry

    def __len__(self):
        return len(self.x0)


def build_pair(scene: Scene, p: SynthParams, pre: PreprocessParams | None = None):
    lidar, radar = scene.lidar, scene.radar
    if pre is not None:
        lidar, radar = preprocess_pair(lidar, radar, pre, scene.extrinsic)
    else:
        lidar = apply_transform(lidar, scene.extrinsic)
    target = normalize(project(lidar, p.lidar_geom))
    cond = normalize(slice_multichannel(radar, p.radar_geom, p.channels))
    return target, cond, lidar, radar


def synth_boxworld(seed: int, n_scenes: int, params: SynthParams | None = None, preprocess=True) -> PairedDataset:
    """Deterministic paired dataset of ``n_scenes`` random rooms."""
    p = params or SynthParams()
    pre = PreprocessParams(p.fov) if preprocess else None
    root = SeededRng(seed)
    xs, vs, cs, scenes = [], [], [], []
    for i in range(n_scenes):
        scene = make_scene(root.child(i).generator, p)
        target, cond, _, _ = build_pair(scene, p, pre)
        xs.append(target.values)
        vs.append(target.valid)
        cs.append(cond.values)
        scenes.append(scene)
    H, W = p.lidar_shape
    C, (h, w) = p.channels, p.radar_shape
    return PairedDataset(
        np.array(xs).reshape(n_scenes, H, W), np.array(vs).reshape(n_scenes, H, W),
        np.array(cs).reshape(n_scenes, C, h, w), scenes, p.lidar_geom, p.radar_geom,
    )
