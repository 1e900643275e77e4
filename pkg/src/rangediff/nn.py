"""NumPy layer primitives with explicit backward passes (NHWC layout).

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the upstream gradient and that cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x, w, b, stride=(1, 1), pad=(0, 0)):
    """2-D cross-correlation. x: (B, H, W, Cin); w: (kh, kw, Cin, Cout)."""
    kh, kw, cin, cout = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]  # (B, Ho, Wo, Cin, kh, kw)
    B, Ho, Wo = win.shape[:3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * cin)
    out = cols @ w.reshape(-1, cout) + b
    return out.reshape(B, Ho, Wo, cout), (x.shape, xp.shape, cols, w, stride, pad)


def conv_backward(dout, cache, need_dx=True):
    x_shape, xp_shape, cols, w, (sh, sw), (ph, pw) = cache
    kh, kw, cin, cout = w.shape
    B, Ho, Wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(B, Ho, Wo, kh, kw, cin)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, ph:ph + x_shape[1], pw:pw + x_shape[2], :]
    return dx, dw, db


def silu_forward(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_backward(dout, cache):
    x, s = cache
    return dout * (s * (1.0 + x * (1.0 - s)))


def upsample_forward(x, factor):
    fh, fw = factor
    return np.repeat(np.repeat(x, fh, axis=1), fw, axis=2)


def upsample_backward(dout, factor):
    fh, fw = factor
    B, H, W, C = dout.shape
    return dout.reshape(B, H // fh, fh, W // fw, fw, C).sum(axis=(2, 4))


def film_forward(h, scale, shift):
    """h * (1 + scale) + shift with per-sample, per-channel scale/shift of shape (B, C)."""
    return h * (1.0 + scale[:, None, None, :]) + shift[:, None, None, :], (h, scale)


def film_backward(dout, cache):
    h, scale = cache
    dh = dout * (1.0 + scale[:, None, None, :])
    dscale = (dout * h).sum(axis=(1, 2))
    dshift = dout.sum(axis=(1, 2))
    return dh, dscale, dshift


def he_init(rng, shape, gain=1.0, dtype=np.float64):
    fan_in = int(np.prod(shape[:-1]))
    return (rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)).astype(dtype)


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip=None):
        self.lr, self.b1, self.b2, self.eps, self.clip = lr, betas[0], betas[1], eps, clip
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        if self.clip is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip:
                grads = {k: g * (self.clip / norm) for k, g in grads.items()}
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] -= upd.astype(params[k].dtype)
