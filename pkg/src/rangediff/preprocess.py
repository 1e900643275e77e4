"""Dataset conditioning: alignment, shared-FOV crop, floor/ceiling removal,
and radar-guided DBSCAN filtering of the LiDAR supervision cloud."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import AngularFov, PointCloud, RigidTransform, apply_transform, as_rng, require_same_frame, spherical

log = logging.getLogger(__name__)

NOISE = -1


def shared_fov_crop(cloud: PointCloud, fov: AngularFov) -> PointCloud:
    """Keep points inside ``fov`` (closed lower bounds, open upper bounds)."""
    r, theta, phi = spherical(cloud.points)
    return cloud.subset(fov.contains(r, theta, phi))


@dataclass(frozen=True)
class PlaneModel:
    """Plane n.p + d = 0 with unit normal n."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal is zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.normal + self.offset)


@dataclass
class GroundParams:
    iterations: int = 200
    dist_tol: float = 0.1
    angle_tol_deg: float = 15.0
    min_inlier_frac: float = 0.05
    seed: int = 0


@dataclass
class PlaneRemoval:
    cloud: PointCloud
    keep: np.ndarray
    planes: list = field(default_factory=list)
    warning: str | None = None


def fit_horizontal_plane(points: np.ndarray, params: GroundParams, rng, min_inliers: int) -> PlaneModel | None:
    """RANSAC for the dominant plane whose normal is within the cone around +-Z."""
    n = len(points)
    if n < 3:
        return None
    idx = rng.integers(0, n, size=(params.iterations, 3))
    p0, p1, p2 = points[idx[:, 0]], points[idx[:, 1]], points[idx[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    normals[ok] /= norms[ok, None]
    cos_tol = np.cos(np.deg2rad(params.angle_tol_deg))
    ok &= np.abs(normals[:, 2]) >= cos_tol
    if not ok.any():
        return None
    normals, p0 = normals[ok], p0[ok]
    offsets = -np.einsum("ij,ij->i", normals, p0)
    counts = (np.abs(points @ normals.T + offsets) <= params.dist_tol).sum(axis=0)
    best = int(np.argmax(counts))  # first maximum: deterministic
    if counts[best] < min_inliers:
        return None
    plane = PlaneModel(normals[best], offsets[best])

    # least-squares refit on the consensus set, kept only if still near-horizontal
    inl = points[plane.distance(points) <= params.dist_tol]
    centroid = inl.mean(axis=0)
    _, _, vt = np.linalg.svd(inl - centroid, full_matrices=False)
    normal = vt[-1]
    if abs(normal[2]) >= cos_tol:
        refit = PlaneModel(normal, -normal @ centroid)
        if (refit.distance(points) <= params.dist_tol).sum() >= counts[best]:
            plane = refit
    return plane


def remove_ground_and_ceiling(cloud: PointCloud, params: GroundParams | None = None) -> PlaneRemoval:
    """Remove the floor, flip Z, remove the (now lower) ceiling, flip back.

    The cloud must be gravity-aligned with Z up.
    """
    params = params or GroundParams()
    n = len(cloud)
    keep = np.ones(n, dtype=bool)
    if n < 3:
        log.warning("plane removal skipped: %d points", n)
        return PlaneRemoval(cloud, keep, [], "fewer than 3 points")
    rng = as_rng(params.seed)
    min_inliers = max(3, int(np.ceil(params.min_inlier_frac * n)))
    planes = []
    flip = np.array([1.0, 1.0, -1.0])
    for sign in (np.ones(3), flip):
        idx = np.flatnonzero(keep)
        pts = cloud.points[idx] * sign
        plane = fit_horizontal_plane(pts, params, rng, min_inliers)
        if plane is None:
            continue
        keep[idx[plane.distance(pts) <= params.dist_tol]] = False
        # report the plane in the original (unflipped) coordinates
        planes.append(PlaneModel(plane.normal * sign, plane.offset))
    return PlaneRemoval(cloud.subset(keep), keep, planes)


def dbscan(cloud: PointCloud | np.ndarray, eps: float = 0.5, min_pts: int = 5) -> np.ndarray:
    """DBSCAN labels (0..K-1, NOISE = -1); neighborhoods include the point itself.

    Clusters are seeded in index order and a border point joins the first
    cluster whose expansion reaches it.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    neigh = cKDTree(pts).query_ball_point(pts, r=eps, return_sorted=True)
    core = np.fromiter((len(nb) >= min_pts for nb in neigh), dtype=bool, count=n)
    k = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = k
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for q in neigh[j]:
                if labels[q] == NOISE:
                    labels[q] = k
                    queue.append(q)
        k += 1
    return labels


def radar_guided_filter(lidar: PointCloud, radar: PointCloud, eps: float = 0.5, min_pts: int = 5) -> PointCloud:
    """Keep LiDAR points whose joint DBSCAN cluster contains at least one radar point."""
    require_same_frame(lidar, radar)
    labels = dbscan(np.vstack([lidar.points, radar.points]), eps, min_pts)
    lid, rad = labels[: len(lidar)], labels[len(lidar):]
    supported = np.unique(rad[rad != NOISE])
    return lidar.subset(np.isin(lid, supported) & (lid != NOISE))


@dataclass
class PreprocessParams:
    fov: AngularFov
    ground: GroundParams = field(default_factory=GroundParams)
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 5
    remove_planes: bool = True
    radar_filter: bool = True


def preprocess_pair(
    lidar: PointCloud,
    radar: PointCloud,
    params: PreprocessParams,
    lidar_to_radar: RigidTransform | None = None,
) -> tuple[PointCloud, PointCloud]:
    """Full conditioning chain; returns (lidar, radar) in the radar frame."""
    if lidar_to_radar is not None:
        lidar = apply_transform(lidar, lidar_to_radar)
    require_same_frame(lidar, radar)
    lidar = shared_fov_crop(lidar, params.fov)
    radar = shared_fov_crop(radar, params.fov)
    if params.remove_planes:
        lidar = remove_ground_and_ceiling(lidar, params.ground).cloud
    if params.radar_filter and len(radar):
        lidar = radar_guided_filter(lidar, radar, params.dbscan_eps, params.dbscan_min_pts)
    return lidar, radar
