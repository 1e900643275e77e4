"""Desk-scale conditional denoiser for range images, trained with plain NumPy.

Layout for a (H, W) target and a (C, H/2, W/8) radar condition::

    x --conv--> e0 (H, W)  --width/4 conv--> e1 (H, W/4)      # horizontal stage
    e1 --stride-2--> (H/2, W/8) ++ cond features --> e2
    e2 --stride-2--> (H/4, W/16) ++ cond features --> e3
    e3 --up2 ++ e2--> d2 --up2 ++ e1--> d1 --up(1,4) ++ e0--> d0 --> head

The radar stack is never resized at the input: a small condition encoder
produces features at the two encoder scales and they are concatenated there.
Noise level enters through FiLM scale/shift on every stage, and the network
output is wrapped in the usual skip/out/in preconditioning, so

    D(x, sigma) = c_skip x + c_out F(c_in x, log(sigma)/4, c).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .core import ConfigError, as_rng
from .diffusion import Denoiser, sample_training_sigma
from .losses import GradientPyramidExtractor, LossWeights, combined_loss

log = logging.getLogger(__name__)

N_FREQ = 4


@dataclass(frozen=True)
class ModelConfig:
    height: int = 32
    width: int = 128
    cond_channels: int = 16
    base: int = 16
    width_mult: int = 32
    cond_width: int = 16
    emb: int = 16
    sigma_data: float = 0.5
    seed: int = 0

    @property
    def cond_shape(self):
        return (self.cond_channels, self.height // 2, self.width // 8)

    def validate(self):
        if self.height % 4 or self.width % 16:
            raise ConfigError("image height must be divisible by 4 and width by 16")
        if self.sigma_data <= 0:
            raise ConfigError("sigma_data must be positive")


def _conv_specs(cfg: ModelConfig):
    b, m, cw, C = cfg.base, cfg.width_mult, cfg.cond_width, cfg.cond_channels
    # name: (kh, kw, cin, cout, stride, pad)
    return {
        "in": (3, 3, 1, b, (1, 1), (1, 1)),
        "hs": (1, 4, b, m, (1, 4), (0, 0)),
        "down1": (3, 3, m, m, (2, 2), (1, 1)),
        "mix1": (3, 3, m + cw, m, (1, 1), (1, 1)),
        "down2": (3, 3, m, m, (2, 2), (1, 1)),
        "mix2": (3, 3, m + cw, m, (1, 1), (1, 1)),
        "cond1": (3, 3, C, cw, (1, 1), (1, 1)),
        "cond2": (3, 3, cw, cw, (2, 2), (1, 1)),
        "dec2": (3, 3, 2 * m, m, (1, 1), (1, 1)),
        "dec1": (3, 3, 2 * m, m, (1, 1), (1, 1)),
        "dec0": (3, 3, m + b, b, (1, 1), (1, 1)),
        "out": (3, 3, b, 1, (1, 1), (1, 1)),
    }


def _film_sites(cfg: ModelConfig):
    return {"in": cfg.base, "mix1": cfg.width_mult, "mix2": cfg.width_mult,
            "dec2": cfg.width_mult, "dec1": cfg.width_mult}


def init_params(cfg: ModelConfig, dtype=np.float64) -> dict:
    cfg.validate()
    rng = as_rng(cfg.seed)
    p = {}
    for name, (kh, kw, cin, cout, _, _) in _conv_specs(cfg).items():
        gain = 0.1 if name == "out" else 1.0
        p[f"{name}.w"] = nn.he_init(rng, (kh, kw, cin, cout), gain, dtype)
        p[f"{name}.b"] = np.zeros(cout, dtype=dtype)
    p["emb.w"] = nn.he_init(rng, (2 * N_FREQ + 1, cfg.emb), 1.0, dtype)
    p["emb.b"] = np.zeros(cfg.emb, dtype=dtype)
    for site, ch in _film_sites(cfg).items():
        p[f"film.{site}.w"] = nn.he_init(rng, (cfg.emb, 2 * ch), 0.1, dtype)
        p[f"film.{site}.b"] = np.zeros(2 * ch, dtype=dtype)
    return p


def precondition(sigma, sigma_data):
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = sigma_data ** 2
    c_skip = s2 / (sigma**2 + s2)
    c_out = sigma * sigma_data / np.sqrt(sigma**2 + s2)
    c_in = 1.0 / np.sqrt(sigma**2 + s2)
    return c_skip, c_out, c_in


def _sigma_features(sigma):
    c_noise = np.log(sigma) / 4.0
    freqs = 2.0 ** np.arange(N_FREQ)
    ang = c_noise[:, None] * freqs[None, :]
    return np.concatenate([c_noise[:, None], np.sin(ang), np.cos(ang)], axis=1)


def network_forward(p: dict, cfg: ModelConfig, x_in, sigma, cond):
    """Raw network F. x_in: (B, H, W); sigma: (B,); cond: (B, C, h, w) or None.

    Returns (F of shape (B, H, W), cache for ``network_backward``).
    """
    specs = _conv_specs(cfg)
    dt = p["in.w"].dtype
    B = x_in.shape[0]
    cache = {}

    def conv(name, h):
        kh, kw, cin, cout, stride, pad = specs[name]
        out, cache[name] = nn.conv_forward(h, p[f"{name}.w"], p[f"{name}.b"], stride, pad)
        return out

    def act(name, h):
        out, cache[name + ".act"] = nn.silu_forward(h)
        return out

    def film(name, h):
        ch = h.shape[-1]
        sc_sh = emb @ p[f"film.{name}.w"] + p[f"film.{name}.b"]
        out, cache[name + ".film"] = nn.film_forward(h, sc_sh[:, :ch], sc_sh[:, ch:])
        return out

    feats = _sigma_features(np.asarray(sigma, dtype=np.float64)).astype(dt)
    emb_pre = feats @ p["emb.w"] + p["emb.b"]
    emb, emb_cache = nn.silu_forward(emb_pre)
    cache["emb"] = (feats, emb_cache, emb)

    if cond is None:
        cond = np.zeros((B,) + cfg.cond_shape, dtype=dt)
    cond = np.asarray(cond, dtype=dt)
    if cond.shape[1:] != cfg.cond_shape:
        raise ValueError(f"condition shape {cond.shape[1:]} does not match {cfg.cond_shape}")
    c1 = act("cond1", conv("cond1", cond.transpose(0, 2, 3, 1)))
    c2 = act("cond2", conv("cond2", c1))

    x = np.asarray(x_in, dtype=dt)[..., None]
    e0 = act("in", film("in", conv("in", x)))
    e1 = act("hs", conv("hs", e0))
    h = act("down1", conv("down1", e1))
    e2 = act("mix1", film("mix1", conv("mix1", np.concatenate([h, c1], axis=-1))))
    h = act("down2", conv("down2", e2))
    e3 = act("mix2", film("mix2", conv("mix2", np.concatenate([h, c2], axis=-1))))
    h = nn.upsample_forward(e3, (2, 2))
    d2 = act("dec2", film("dec2", conv("dec2", np.concatenate([h, e2], axis=-1))))
    h = nn.upsample_forward(d2, (2, 2))
    d1 = act("dec1", film("dec1", conv("dec1", np.concatenate([h, e1], axis=-1))))
    h = nn.upsample_forward(d1, (1, 4))
    d0 = act("dec0", conv("dec0", np.concatenate([h, e0], axis=-1)))
    out = conv("out", d0)
    return out[..., 0], cache


def network_backward(p: dict, cfg: ModelConfig, dF, cache) -> dict:
    """Gradients of sum(dF * F) with respect to every parameter."""
    g = {k: np.zeros_like(v) for k, v in p.items()}
    m = cfg.width_mult
    demb = np.zeros_like(cache["emb"][2])

    def conv_b(name, d):
        dx, dw, db = nn.conv_backward(d, cache[name], need_dx=name not in ("in", "cond1"))
        g[f"{name}.w"] += dw
        g[f"{name}.b"] += db
        return dx

    def act_b(name, d):
        return nn.silu_backward(d, cache[name + ".act"])

    def film_b(name, d):
        nonlocal demb
        dh, dsc, dsh = nn.film_backward(d, cache[name + ".film"])
        dss = np.concatenate([dsc, dsh], axis=1)
        g[f"film.{name}.w"] += cache["emb"][2].T @ dss
        g[f"film.{name}.b"] += dss.sum(axis=0)
        demb = demb + dss @ p[f"film.{name}.w"].T
        return dh

    d = conv_b("out", np.asarray(dF, dtype=p["out.w"].dtype)[..., None])
    d = conv_b("dec0", act_b("dec0", d))
    de0 = d[..., m:]
    d1 = nn.upsample_backward(d[..., :m], (1, 4))
    d = conv_b("dec1", film_b("dec1", act_b("dec1", d1)))
    de1 = d[..., m:]
    d2 = nn.upsample_backward(d[..., :m], (2, 2))
    d = conv_b("dec2", film_b("dec2", act_b("dec2", d2)))
    de2 = d[..., m:]
    de3 = nn.upsample_backward(d[..., :m], (2, 2))

    d = conv_b("mix2", film_b("mix2", act_b("mix2", de3)))
    dc2 = d[..., m:]
    de2 = de2 + conv_b("down2", act_b("down2", d[..., :m]))
    d = conv_b("mix1", film_b("mix1", act_b("mix1", de2)))
    dc1 = d[..., m:]
    de1 = de1 + conv_b("down1", act_b("down1", d[..., :m]))
    de0 = de0 + conv_b("hs", act_b("hs", de1))
    conv_b("in", film_b("in", act_b("in", de0)))

    dc1 = dc1 + conv_b("cond2", act_b("cond2", dc2))
    conv_b("cond1", act_b("cond1", dc1))

    feats, emb_cache, _ = cache["emb"]
    demb_pre = nn.silu_backward(demb, emb_cache)
    g["emb.w"] += feats.T @ demb_pre
    g["emb.b"] += demb_pre.sum(axis=0)
    return g


class ToyDenoiser(Denoiser):
    """Preconditioned conditional denoiser. Accepts (H, W) or (B, H, W) inputs."""

    def __init__(self, cfg: ModelConfig | None = None, params: dict | None = None, dtype=np.float64):
        self.cfg = cfg or ModelConfig()
        self.cfg.validate()
        self.params = params if params is not None else init_params(self.cfg, dtype)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def _batch(self, x, sigma, c):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
            c = None if c is None else np.asarray(c)[None]
        if x.shape[1:] != (self.cfg.height, self.cfg.width):
            raise ValueError(f"input shape {x.shape[1:]} does not match {(self.cfg.height, self.cfg.width)}")
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],)).copy()
        if (sigma <= 0).any():
            raise ValueError("sigma must be positive")
        return x, sigma, c, single

    def evaluate(self, x, sigma, c=None):
        x, sigma, c, single = self._batch(x, sigma, c)
        c_skip, c_out, c_in = precondition(sigma, self.cfg.sigma_data)
        F, _ = network_forward(self.params, self.cfg, c_in[:, None, None] * x, sigma, c)
        out = c_skip[:, None, None] * x + c_out[:, None, None] * F.astype(np.float64)
        return out[0] if single else out


@dataclass
class Batch:
    """Everything needed for one deterministic loss evaluation."""

    x0: np.ndarray  # (B, H, W) normalized target
    valid: np.ndarray  # (B, H, W) target validity
    cond: np.ndarray  # (B, C, h, w)
    sigma: np.ndarray  # (B,)
    noise: np.ndarray  # (B, H, W) standard normal


@dataclass
class TrainConfig:
    lr: float = 2e-3
    steps: int = 2000
    batch_size: int = 8
    p_mean: float = -1.2
    p_std: float = 1.2
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    log_every: int = 100
    grad_clip: float | None = 1.0
    diverge_factor: float = 1e3
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.lr < 0 or self.steps < 0 or self.batch_size < 1:
            raise ConfigError("lr and steps must be >= 0, batch_size >= 1")
        if self.p_std <= 0:
            raise ConfigError("p_std must be positive")


class TrainingDivergedError(RuntimeError):
    pass


def gradients(params: dict, batch: Batch, cfg: ModelConfig, weights: LossWeights | None = None, extractor=None):
    """Loss and exact parameter gradients for one batch.

    Returns ``(grads, loss, terms)`` where ``terms`` is the unweighted breakdown.
    """
    weights = weights or LossWeights()
    c_skip, c_out, c_in = (a[:, None, None] for a in precondition(batch.sigma, cfg.sigma_data))
    x_t = batch.x0 + batch.sigma[:, None, None] * batch.noise
    F, cache = network_forward(params, cfg, c_in * x_t, batch.sigma, batch.cond)
    D = c_skip * x_t + c_out * F.astype(np.float64)
    loss, terms, dD = combined_loss(batch.x0, D, weights, extractor, valid=batch.valid, grad=True)
    grads = network_backward(params, cfg, c_out * dD, cache)
    return grads, loss, terms


def measure_sigma_data(targets: np.ndarray) -> float:
    return float(np.std(targets))


def smoothed(curve, window: int = 100) -> np.ndarray:
    curve = np.asarray(curve, dtype=np.float64)
    window = max(1, min(window, len(curve)))
    return np.convolve(curve, np.ones(window) / window, mode="valid")


def train(dataset, tcfg: TrainConfig | None = None, mcfg: ModelConfig | None = None, callback=None):
    """Fit a ``ToyDenoiser`` to ``dataset``.

    ``dataset`` is a mapping/object with arrays ``x0`` (N, H, W), ``valid``
    (N, H, W) and ``cond`` (N, C, h, w). Returns ``(model, loss_curve)``.
    """
    tcfg = tcfg or TrainConfig()
    x0_all, valid_all, cond_all = (np.asarray(_get(dataset, k)) for k in ("x0", "valid", "cond"))
    n, H, W = x0_all.shape
    if mcfg is None:
        mcfg = ModelConfig(height=H, width=W, cond_channels=cond_all.shape[1],
                           sigma_data=measure_sigma_data(x0_all), seed=tcfg.seed)
    dtype = np.dtype(tcfg.dtype)
    model = ToyDenoiser(mcfg, dtype=dtype)
    params = model.params
    opt = nn.Adam(params, lr=tcfg.lr, clip=tcfg.grad_clip)
    rng = as_rng(tcfg.seed)
    ext = GradientPyramidExtractor()
    curve = []
    for step in range(tcfg.steps):
        idx = rng.integers(0, n, size=tcfg.batch_size)
        batch = Batch(
            x0_all[idx], valid_all[idx], cond_all[idx].astype(dtype),
            sample_training_sigma(rng, tcfg.batch_size, tcfg.p_mean, tcfg.p_std),
            rng.standard_normal((tcfg.batch_size, H, W)),
        )
        grads, loss, terms = gradients(params, batch, mcfg, tcfg.weights, ext)
        curve.append(loss)
        if step > 0 and loss > tcfg.diverge_factor * curve[0]:
            raise TrainingDivergedError(
                f"loss {loss:.4g} at step {step} exceeds {tcfg.diverge_factor:g}x initial {curve[0]:.4g}")
        opt.step(params, grads)
        if tcfg.log_every and (step % tcfg.log_every == 0 or step == tcfg.steps - 1):
            log.info("step %d loss %.5f mse %.5f perc %.5f pix %.5f", step, loss,
                     terms["mse"], terms["perceptual"], terms["pixel"])
            if callback is not None:
                callback(step, loss, terms)
    return model, np.array(curve)


def _get(ds, key):
    return ds[key] if isinstance(ds, dict) else getattr(ds, key)


# --- checkpoint format ---------------------------------------------------------
#
# little-endian:
#   4s   magic b"TDCK"
#   u32  version (1)
#   u32  byte length L of the UTF-8 JSON model config that follows
#   L    JSON ModelConfig
#   u32  tensor count T
#   T times:
#     u16 name length, name (UTF-8)
#     u8  ndim, ndim x u32 dims
#     prod(dims) float32 values, C order

CKPT_MAGIC = b"TDCK"
CKPT_VERSION = 1


def save_checkpoint(model: ToyDenoiser, path) -> None:
    meta = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = model.params[name]
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, dtype=np.float32) -> ToyDenoiser:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ValueError(f"checkpoint truncated at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != CKPT_MAGIC:
        raise ValueError("bad checkpoint magic at byte 0")
    version, mlen = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} at byte 4")
    cfg = ModelConfig(**json.loads(take(mlen)))
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nl,) = struct.unpack("<H", take(2))
        name = take(nl).decode()
        (nd,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{nd}I", take(4 * nd))
        size = int(np.prod(shape)) if nd else 1
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").astype(dtype).reshape(shape)
    if pos != len(buf):
        raise ValueError(f"trailing bytes after checkpoint at byte {pos}")
    expected = set(init_params(cfg).keys())
    if set(params) != expected:
        raise ValueError("checkpoint tensors do not match the model layout")
    return ToyDenoiser(cfg, params)
