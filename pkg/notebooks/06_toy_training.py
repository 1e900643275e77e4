"""
Training the toy conditional denoiser
=====================================

Box-world rooms give paired (LiDAR range image, radar range-image stack)
examples. A small U-Net learns to denoise LiDAR images given the radar stack;
sampling with and without the radar condition shows the condition matters.

Run with a step count, e.g. ``python 06_toy_training.py 2000``; the default
300 steps take about two minutes.
"""

import sys

import numpy as np

from rangediff import chamfer, heun_sample, make_schedule
from rangediff.model import TrainConfig, smoothed, train
from rangediff.projection import NormalizedImage, backproject, denormalize, from_values
from rangediff.synth import synth_boxworld

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

data = synth_boxworld(0, 64)
print("targets", data.x0.shape, "conditions", data.cond.shape)

model, curve = train(data, TrainConfig(steps=steps, log_every=0))
sm = smoothed(curve, min(100, steps // 3))
print(f"{model.n_params} parameters, smoothed loss {sm[0]:.4f} -> {sm[-1]:.4f}")

held = synth_boxworld(1000, 5)
sched = make_schedule()
x_init = np.random.default_rng(7).standard_normal(held.x0.shape) * sched.sigma_max
with_c = heun_sample(model, sched, held.x0.shape, c=held.cond, x_init=x_init)
no_c = heun_sample(model, sched, held.x0.shape, c=np.zeros_like(held.cond), x_init=x_init)

g = held.lidar_geom
for i in range(len(held)):
    truth = backproject(denormalize(NormalizedImage(g, held.x0[i], held.valid[i])))
    a = chamfer(backproject(denormalize(from_values(with_c[i], g))), truth)
    b = chamfer(backproject(denormalize(from_values(no_c[i], g))), truth)
    print(f"scene {i}: CD with radar {a:.3f} m, without {b:.3f} m")
