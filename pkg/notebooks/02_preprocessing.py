"""
Conditioning LiDAR supervision
==============================

Before a LiDAR scan can supervise a radar model it is moved into the radar
frame, cropped to the shared field of view, stripped of floor and ceiling,
and filtered down to the clusters the radar actually sees.
"""

import numpy as np

from rangediff import PointCloud
from rangediff.preprocess import PreprocessParams, dbscan, preprocess_pair, radar_guided_filter, remove_ground_and_ceiling
from rangediff.synth import DESK_FOV, LIDAR_TO_RADAR, SynthParams, make_scene

rng = np.random.default_rng(1)

# a floor at z=0, a ceiling at z=3 and a box standing on the floor
floor = np.c_[rng.uniform(-5, 5, (1000, 2)), 0.01 * rng.standard_normal(1000)]
ceiling = np.c_[rng.uniform(-5, 5, (800, 2)), 3 + 0.01 * rng.standard_normal(800)]
box = rng.uniform([1, 1, 0.5], [2, 2, 1.5], (200, 3))
res = remove_ground_and_ceiling(PointCloud(np.vstack([floor, ceiling, box])))
print("planes found:", [(np.round(p.normal, 3), round(p.offset, 3)) for p in res.planes])
print("kept", len(res.cloud), "of 2000 points; box intact:", res.keep[1800:].all())

# DBSCAN on the joint cloud decides which LiDAR clusters have radar support
centers = np.array([[3.0, 0, 0], [0, 4, 0], [-3, -3, 0]])
lidar = np.vstack([c + 0.1 * rng.standard_normal((40, 3)) for c in centers])
radar = np.vstack([centers[0] + 0.05, centers[1] - 0.05])
print("cluster labels:", np.unique(dbscan(lidar, 0.5, 5)))
print("supported LiDAR points:", len(radar_guided_filter(PointCloud(lidar), PointCloud(radar))), "of", len(lidar))

# the full chain on one synthetic room
scene = make_scene(np.random.default_rng(3), SynthParams())
lid, rad = preprocess_pair(scene.lidar, scene.radar, PreprocessParams(DESK_FOV), LIDAR_TO_RADAR)
print(f"room: {len(scene.lidar)} LiDAR / {len(scene.radar)} radar points -> {len(lid)} LiDAR kept ({lid.frame_id} frame)")
