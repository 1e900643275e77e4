"""Range-image diffusion for mmWave radar point-cloud super-resolution."""

from .core import (AngularFov, ConfigError, FrameMismatchError, ImageGeometry, PointCloud, RigidTransform,
                   SeededRng, apply_transform)
from .diffusion import GaussianAnalyticDenoiser, heun_sample, make_schedule
from .metrics import chamfer, fscore, mhd
from .projection import backproject, project, slice_multichannel

__version__ = "0.1.0"

__all__ = [
    "AngularFov", "ConfigError", "FrameMismatchError", "ImageGeometry", "PointCloud", "RigidTransform",
    "SeededRng", "apply_transform", "GaussianAnalyticDenoiser", "heun_sample", "make_schedule",
    "chamfer", "fscore", "mhd", "backproject", "project", "slice_multichannel",
]
