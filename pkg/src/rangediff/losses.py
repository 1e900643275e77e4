"""Training objective: MSE + perceptual feature distance + masked per-pixel L1.

Every loss here is a mean, so values do not scale with image size. Each term
has a matching ``*_grad`` giving d(loss)/d(prediction).
"""

from __future__ import annotations

import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


class EmptyMaskWarning(UserWarning):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value):
        super().__init__(f"loss term {term!r} is not finite ({value})")
        self.term = term


def _check_shapes(x0, d):
    x0 = np.asarray(x0, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if x0.shape != d.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {d.shape}")
    return x0, d


def mse_loss(x0, d) -> float:
    x0, d = _check_shapes(x0, d)
    return float(np.mean((x0 - d) ** 2))


def mse_grad(x0, d) -> np.ndarray:
    x0, d = _check_shapes(x0, d)
    return 2.0 * (d - x0) / d.size


def _mask(x0, valid):
    if valid is None:
        return np.ones(x0.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != x0.shape:
        raise ValueError("mask shape does not match image shape")
    return valid


def pixel_distance_loss(x0, d, valid=None) -> float:
    """Mean |x0 - d| over the pixels valid in the target."""
    x0, d = _check_shapes(x0, d)
    m = _mask(x0, valid)
    n = int(m.sum())
    if n == 0:
        warnings.warn("no valid pixels; pixel distance loss is 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    return float(np.abs(x0 - d)[m].sum() / n)


def pixel_distance_grad(x0, d, valid=None) -> np.ndarray:
    x0, d = _check_shapes(x0, d)
    m = _mask(x0, valid)
    n = int(m.sum())
    if n == 0:
        return np.zeros_like(d)
    return np.where(m, np.sign(d - x0), 0.0) / n


# --- perceptual features -------------------------------------------------------


class PerceptualFeatureExtractor(ABC):
    """Maps images (..., H, W) to a list of feature arrays.

    ``vjp`` pulls a list of feature cotangents back to image space; learned
    extractors only need to provide both methods to plug into training.
    """

    @abstractmethod
    def features(self, img: np.ndarray) -> list[np.ndarray]: ...

    @abstractmethod
    def vjp(self, img: np.ndarray, grads: list[np.ndarray]) -> np.ndarray: ...


def _avgpool(x, k):
    h, w = x.shape[-2] // k * k, x.shape[-1] // k * k
    x = x[..., :h, :w]
    return x.reshape(*x.shape[:-2], h // k, k, w // k, k).mean(axis=(-3, -1))


def _avgpool_back(g, k, in_shape):
    out = np.zeros(in_shape)
    up = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1) / (k * k)
    out[..., : up.shape[-2], : up.shape[-1]] = up
    return out


class GradientPyramidExtractor(PerceptualFeatureExtractor):
    """Hand-crafted structure features.

    For each pyramid level (2x2 average downsampling) it emits the 4x4
    average-pooled image and the 4x4 average-pooled finite-difference gradient
    magnitude sqrt(gx^2 + gy^2 + eps).
    """

    def __init__(self, levels: int = 3, pool: int = 4, eps: float = 1e-6):
        self.levels, self.pool, self.eps = levels, pool, eps

    def _forward(self, img):
        img = np.asarray(img, dtype=np.float64)
        feats, cache = [], []
        cur = img
        for lvl in range(self.levels):
            if lvl > 0:
                if min(cur.shape[-2:]) < 2:
                    break
                cur = _avgpool(cur, 2)
            h, w = cur.shape[-2:]
            if h < 2 or w < 2:
                break
            gx = cur[..., :-1, 1:] - cur[..., :-1, :-1]
            gy = cur[..., 1:, :-1] - cur[..., :-1, :-1]
            mag = np.sqrt(gx * gx + gy * gy + self.eps)
            k = min(self.pool, h - 1, w - 1)
            feats.append(_avgpool(cur, k))
            feats.append(_avgpool(mag, k))
            cache.append((cur.shape, gx, gy, mag, k))
        return feats, cache

    def features(self, img):
        return self._forward(img)[0]

    def vjp(self, img, grads):
        img = np.asarray(img, dtype=np.float64)
        _, cache = self._forward(img)
        total = np.zeros_like(img)
        for lvl in reversed(range(len(cache))):
            shape, gx, gy, mag, k = cache[lvl]
            g_img = _avgpool_back(grads[2 * lvl], k, shape)
            g_mag = _avgpool_back(grads[2 * lvl + 1], k, mag.shape)
            g_gx, g_gy = g_mag * gx / mag, g_mag * gy / mag
            g_img[..., :-1, 1:] += g_gx
            g_img[..., :-1, :-1] -= g_gx + g_gy
            g_img[..., 1:, :-1] += g_gy
            total += _lift(g_img, lvl, img.shape)
        return total


def _lift(g, lvl, base_shape):
    """Adjoint of ``lvl`` successive 2x2 average-poolings starting at ``base_shape``."""
    shapes = [base_shape]
    for _ in range(lvl):
        s = shapes[-1]
        shapes.append(s[:-2] + (s[-2] // 2, s[-1] // 2))
    for s in reversed(shapes[:-1]):
        g = _avgpool_back(g, 2, s)
    return g


def perceptual_loss(x0, d, extractor: PerceptualFeatureExtractor | None = None) -> float:
    """Sum over feature maps of the mean squared feature difference."""
    x0, d = _check_shapes(x0, d)
    ext = extractor or GradientPyramidExtractor()
    return float(sum(np.mean((a - b) ** 2) for a, b in zip(ext.features(x0), ext.features(d))))


def perceptual_grad(x0, d, extractor: PerceptualFeatureExtractor | None = None) -> np.ndarray:
    x0, d = _check_shapes(x0, d)
    ext = extractor or GradientPyramidExtractor()
    fa, fb = ext.features(x0), ext.features(d)
    cot = [2.0 * (b - a) / a.size for a, b in zip(fa, fb)]
    return ext.vjp(d, cot)


@dataclass(frozen=True)
class LossWeights:
    mse: float = 1.0
    perceptual: float = 0.5
    pixel: float = 1.0

    def __post_init__(self):
        if min(self.mse, self.perceptual, self.pixel) < 0:
            raise ValueError("loss weights must be >= 0")


def combined_loss(x0, d, weights: LossWeights | None = None, extractor=None, valid=None, grad=False):
    """Weighted sum of the three terms.

    Returns ``(total, breakdown)`` or, with ``grad=True``,
    ``(total, breakdown, d_total/d_d)``. ``breakdown`` holds the unweighted terms.
    """
    w = weights or LossWeights()
    ext = extractor or GradientPyramidExtractor()
    terms = {"mse": mse_loss(x0, d)}
    terms["perceptual"] = perceptual_loss(x0, d, ext) if w.perceptual else 0.0
    terms["pixel"] = pixel_distance_loss(x0, d, valid) if w.pixel else 0.0
    for name, v in terms.items():
        if not np.isfinite(v):
            raise NonFiniteLossError(name, v)
    total = w.mse * terms["mse"] + w.perceptual * terms["perceptual"] + w.pixel * terms["pixel"]
    if not grad:
        return total, terms
    g = w.mse * mse_grad(x0, d)
    if w.perceptual:
        g = g + w.perceptual * perceptual_grad(x0, d, ext)
    if w.pixel:
        g = g + w.pixel * pixel_distance_grad(x0, d, valid)
    return total, terms, g
