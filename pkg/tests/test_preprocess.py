import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_dbscan
from rangediff.core import AngularFov, PointCloud, RigidTransform, spherical
from rangediff.preprocess import (
    NOISE,
    GroundParams,
    PlaneModel,
    PreprocessParams,
    dbscan,
    preprocess_pair,
    radar_guided_filter,
    remove_ground_and_ceiling,
    shared_fov_crop,
)

FOV = AngularFov(-np.pi / 3, np.pi / 3, np.pi / 2 - 0.3, np.pi / 2 + 0.3, 0.5, 10.0)


def blobs(rng, centers, n_each, spread=0.15):
    return np.vstack([c + spread * rng.standard_normal((n_each, 3)) for c in centers])


# --- shared_fov_crop ----------------------------------------------------------


def test_crop_drops_far_point_and_keeps_theta_min():
    p_far = [11.0, 0.0, 0.0]
    p_edge = [2 * np.cos(FOV.theta_min), 2 * np.sin(FOV.theta_min), 0.0]
    out = shared_fov_crop(PointCloud(np.array([p_far, p_edge])), FOV)
    assert len(out) == 1
    np.testing.assert_allclose(out.points[0], p_edge)


def test_crop_matches_predicate(rng):
    pts = rng.uniform(-12, 12, (3000, 3))
    out = shared_fov_crop(PointCloud(pts), FOV)
    r, th, ph = spherical(pts)
    keep = [
        FOV.r_min <= r[i] < FOV.r_max and FOV.theta_min <= th[i] < FOV.theta_max and FOV.phi_min <= ph[i] < FOV.phi_max
        for i in range(len(pts))
    ]
    np.testing.assert_array_equal(out.points, pts[np.array(keep)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_crop_idempotent(seed):
    pts = np.random.default_rng(seed).uniform(-12, 12, (300, 3))
    once = shared_fov_crop(PointCloud(pts), FOV)
    twice = shared_fov_crop(once, FOV)
    np.testing.assert_array_equal(once.points, twice.points)


# --- plane removal ------------------------------------------------------------


def floor_box(rng):
    floor = np.c_[rng.uniform(-5, 5, (1000, 2)), 0.01 * rng.standard_normal(1000)]
    box = rng.uniform([1, 1, 0.5], [2, 2, 1.5], (200, 3))
    return floor, box


def test_floor_and_box(rng):
    floor, box = floor_box(rng)
    res = remove_ground_and_ceiling(PointCloud(np.vstack([floor, box])))
    assert res.keep[1000:].all()
    assert (~res.keep[:1000]).mean() >= 0.99


def test_floor_and_ceiling(rng):
    floor, box = floor_box(rng)
    ceil = np.c_[rng.uniform(-5, 5, (800, 2)), 3.0 + 0.01 * rng.standard_normal(800)]
    pts = np.vstack([floor, ceil, box])
    res = remove_ground_and_ceiling(PointCloud(pts))
    assert len(res.planes) == 2
    assert (~res.keep[:1800]).mean() >= 0.99
    assert res.keep[1800:].all()
    heights = sorted(-p.offset / p.normal[2] for p in res.planes)
    np.testing.assert_allclose(heights, [0.0, 3.0], atol=0.02)


def test_no_plane_support_is_noop(rng):
    # points scattered through a volume: no horizontal slab holds 5%
    pts = rng.uniform(-5, 5, (400, 3)) * [1, 1, 20]
    res = remove_ground_and_ceiling(PointCloud(pts), GroundParams(min_inlier_frac=0.5))
    assert res.keep.all() and res.planes == []


def test_fewer_than_three_points_warns():
    res = remove_ground_and_ceiling(PointCloud(np.zeros((2, 3))))
    assert res.warning is not None and len(res.cloud) == 2


def test_removed_points_lie_near_planes(rng):
    floor, box = floor_box(rng)
    pts = np.vstack([floor, box, rng.uniform(-5, 5, (300, 3))])
    p = GroundParams()
    res = remove_ground_and_ceiling(PointCloud(pts), p)
    gone = pts[~res.keep]
    dist = np.min([pl.distance(gone) for pl in res.planes], axis=0)
    assert (dist <= p.dist_tol + 1e-12).all()


def test_plane_removal_seeded(rng):
    floor, box = floor_box(rng)
    c = PointCloud(np.vstack([floor, box]))
    np.testing.assert_array_equal(remove_ground_and_ceiling(c).keep, remove_ground_and_ceiling(c).keep)


def test_plane_normal_unit():
    p = PlaneModel(np.array([0.0, 0.0, 2.0]), 4.0)
    assert abs(np.linalg.norm(p.normal) - 1) < 1e-9
    assert p.offset == 2.0


# --- DBSCAN -------------------------------------------------------------------


def test_two_far_clusters(rng):
    pts = blobs(rng, [np.zeros(3), np.array([10.0, 0, 0])], 50)
    lab = dbscan(pts, 0.5, 5)
    assert set(lab) == {0, 1}
    assert (lab[:50] == 0).all() and (lab[50:] == 1).all()


def test_isolated_point_is_noise():
    assert dbscan(np.zeros((1, 3)), 0.5, 2)[0] == NOISE


def test_empty():
    assert dbscan(PointCloud.empty(), 0.5, 5).shape == (0,)


def test_bad_params():
    with pytest.raises(ValueError):
        dbscan(np.zeros((3, 3)), 0.0, 5)
    with pytest.raises(ValueError):
        dbscan(np.zeros((3, 3)), 0.5, 0)


@pytest.mark.parametrize("seed", range(40))
def test_dbscan_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 201))
    k = int(rng.integers(1, 5))
    centers = rng.uniform(-3, 3, (k, 3))
    pts = centers[rng.integers(0, k, n)] + rng.uniform(0.1, 0.6) * rng.standard_normal((n, 3))
    eps, min_pts = float(rng.uniform(0.2, 0.8)), int(rng.integers(1, 8))
    lab = dbscan(pts, eps, min_pts)
    core, comp, allowed = brute_dbscan(pts, eps, min_pts)
    np.testing.assert_array_equal(lab[core], comp[core])
    for i in np.flatnonzero(~core):
        if allowed[i]:
            assert lab[i] in allowed[i]
        else:
            assert lab[i] == NOISE
    # labels are contiguous 0..K-1
    ks = np.unique(lab[lab != NOISE])
    np.testing.assert_array_equal(ks, np.arange(len(ks)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dbscan_permutation_consistent(seed):
    rng = np.random.default_rng(seed)
    pts = blobs(rng, rng.uniform(-4, 4, (3, 3)), 30, spread=0.2)
    # nudge away from eps ties
    eps = 0.45
    perm = rng.permutation(len(pts))
    a = dbscan(pts, eps, 4)
    b = np.empty_like(a)
    b[perm] = dbscan(pts[perm], eps, 4)
    core, _, allowed = brute_dbscan(pts, eps, 4)
    ambiguous = np.array([len(s) > 1 for s in allowed])

    def partition(lab):
        return {frozenset(np.flatnonzero((lab == k) & ~ambiguous)) for k in set(lab[~ambiguous]) if k != NOISE}

    assert partition(a) == partition(b)
    np.testing.assert_array_equal(a == NOISE, b == NOISE)


# --- radar-guided filter ------------------------------------------------------


def test_radar_guided_fixture(rng):
    c1, c2, c3 = np.array([3.0, 0, 0]), np.array([0, 4.0, 0]), np.array([-3.0, -3, 0])
    lidar = blobs(rng, [c1, c2, c3], 40, spread=0.1)
    radar = np.vstack([c1 + 0.05, c2 - 0.05, [[20.0, 20, 0]] * 6])
    out = radar_guided_filter(PointCloud(lidar), PointCloud(radar))
    np.testing.assert_array_equal(out.points, lidar[:80])


def test_radar_guided_subset(rng):
    lidar = rng.uniform(-3, 3, (300, 3))
    radar = rng.uniform(-3, 3, (20, 3))
    out = radar_guided_filter(PointCloud(lidar), PointCloud(radar))
    rows = {tuple(p) for p in lidar}
    assert all(tuple(p) in rows for p in out.points)


def test_far_cluster_dropped(rng):
    lidar = blobs(rng, [np.array([10.0, 0, 0])], 30, spread=0.1)
    radar = blobs(rng, [np.zeros(3)], 10, spread=0.1)
    assert len(radar_guided_filter(PointCloud(lidar), PointCloud(radar))) == 0


def test_preprocess_pair_moves_lidar_into_radar_frame(rng):
    floor, box = floor_box(rng)
    lidar = PointCloud(np.vstack([floor, box]) + [0, 0, -0.1], "lidar")
    radar = PointCloud(box[::10], "radar")
    tf = RigidTransform(np.eye(3), (0.0, 0.0, 0.1), "lidar", "radar")
    fov = AngularFov(-np.pi, np.pi, 0.0, np.pi, 0.0, 20.0)
    lo, ro = preprocess_pair(lidar, radar, PreprocessParams(fov), tf)
    assert lo.frame_id == "radar" and ro.frame_id == "radar"
    np.testing.assert_allclose(np.sort(lo.points, axis=0), np.sort(box, axis=0), atol=1e-12)
