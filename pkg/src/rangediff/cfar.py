"""Order-statistic CFAR over range-azimuth(-elevation) power maps."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, PointCloud, as_rng, spherical_to_cartesian

# alpha used to build raw radar clouds: keep almost every cell with energy.
NEAR_ZERO_ALPHA = 1e-3
PRESETS = {"near-zero": NEAR_ZERO_ALPHA, "standard": 5.0}


@dataclass(frozen=True)
class PowerMap:
    """Linear cell powers indexed (range, azimuth[, elevation]).

    Bin i along an axis covers [start + i*step, start + (i+1)*step).
    2-D maps sit in the horizontal plane (elevation pi/2).
    """

    powers: np.ndarray
    r0: float = 0.0
    dr: float = 0.1
    theta0: float = -np.pi / 3
    dtheta: float = np.deg2rad(2.0)
    phi0: float = np.pi / 2
    dphi: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=np.float64)
        if p.ndim not in (2, 3):
            raise ValueError("power map must be 2-D or 3-D")
        if not np.all(np.isfinite(p)) or (p < 0).any():
            raise ValueError("powers must be finite and non-negative")
        object.__setattr__(self, "powers", p)

    @property
    def shape(self):
        return self.powers.shape

    def bin_centers(self, idx: np.ndarray):
        """(r, theta, phi) at the centers of the given (N, ndim) bin indices."""
        idx = np.asarray(idx).reshape(-1, self.powers.ndim)
        r = self.r0 + (idx[:, 0] + 0.5) * self.dr
        theta = self.theta0 + (idx[:, 1] + 0.5) * self.dtheta
        if self.powers.ndim == 3:
            phi = self.phi0 + (idx[:, 2] + 0.5) * self.dphi
        else:
            phi = np.full(len(idx), self.phi0)
        return r, theta, phi

    def locate(self, r, theta, phi=np.pi / 2):
        """Bin index of a spherical position, or None if outside the map."""
        pos = [(r - self.r0) / self.dr, (theta - self.theta0) / self.dtheta]
        if self.powers.ndim == 3:
            pos.append((phi - self.phi0) / self.dphi)
        idx = tuple(int(np.floor(v)) for v in pos)
        if any(i < 0 or i >= n for i, n in zip(idx, self.shape)):
            return None
        return idx


@dataclass(frozen=True)
class Detection:
    index: tuple
    power: float
    r: float
    theta: float
    phi: float


def _training_offsets(guard: int, train: int, window: str, ndim: int):
    if window == "range":
        one = np.r_[-guard - train:-guard, guard + 1:guard + train + 1]
        offs = np.zeros((len(one), ndim), dtype=np.int64)
        offs[:, 0] = one
        return offs
    if window == "2d":
        reach = guard + train
        g = np.arange(-reach, reach + 1)
        rr, aa = np.meshgrid(g, g, indexing="ij")
        ring = (np.maximum(np.abs(rr), np.abs(aa)) > guard).ravel()
        offs = np.zeros((int(ring.sum()), ndim), dtype=np.int64)
        offs[:, 0], offs[:, 1] = rr.ravel()[ring], aa.ravel()[ring]
        return offs
    raise ConfigError(f"unknown CFAR window {window!r}")


def noise_estimate(powers: np.ndarray, guard: int = 2, train: int = 8, k_rank: float = 0.75, window: str = "range"):
    """Per-cell order-statistic noise level.

    Training cells that fall outside the map are dropped, so edge cells use a
    shorter window; the rank is ceil(k_rank * m) of the m cells available.
    """
    if train < 1 or guard < 0:
        raise ConfigError("need train >= 1 and guard >= 0")
    if not 0.0 < k_rank <= 1.0:
        raise ConfigError("k_rank must lie in (0, 1]")
    powers = np.asarray(powers, dtype=np.float64)
    offs = _training_offsets(guard, train, window, powers.ndim)
    grid = np.indices(powers.shape).reshape(powers.ndim, -1).T  # (cells, ndim)
    nb = grid[:, None, :] + offs[None, :, :]  # (cells, T, ndim)
    inside = np.all((nb >= 0) & (nb < np.array(powers.shape)), axis=2)
    m = inside.sum(axis=1)
    if (m == 0).any():
        raise ConfigError("CFAR window has no training cells for some cell; map too small")
    nb = np.where(inside[..., None], nb, 0)
    vals = powers[tuple(nb[..., d] for d in range(powers.ndim))]
    vals = np.sort(np.where(inside, vals, np.inf), axis=1)
    rank = np.ceil(k_rank * m).astype(np.int64) - 1
    z = np.take_along_axis(vals, rank[:, None], axis=1)[:, 0]
    return z.reshape(powers.shape)


def os_cfar(
    pmap: PowerMap,
    guard: int = 2,
    train: int = 8,
    k_rank: float = 0.75,
    alpha: float = 5.0,
    window: str = "range",
) -> list[Detection]:
    """Detect cells whose power exceeds ``alpha`` times the order-statistic noise estimate."""
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    z = noise_estimate(pmap.powers, guard, train, k_rank, window)
    hits = np.argwhere(pmap.powers > alpha * z)
    r, theta, phi = pmap.bin_centers(hits)
    p = pmap.powers[tuple(hits.T)]
    return [Detection(tuple(int(v) for v in h), float(pw), float(a), float(b), float(c))
            for h, pw, a, b, c in zip(hits, p, r, theta, phi)]


def detections_to_cloud(dets: list[Detection], frame_id: str = "radar") -> PointCloud:
    if not dets:
        return PointCloud.empty(frame_id)
    sph = np.array([(d.r, d.theta, d.phi) for d in dets])
    return PointCloud(spherical_to_cartesian(sph[:, 0], sph[:, 1], sph[:, 2]), frame_id)


def synth_power_map(
    targets,
    noise_seed,
    shape=(128, 64),
    **bins,
) -> PowerMap:
    """Exponential(1) noise floor plus point targets ``(r, theta, phi, snr_db)``.

    Each target adds 10**(snr_db/10) to the single cell containing it.
    """
    rng = as_rng(noise_seed)
    empty = PowerMap(np.zeros(shape), **bins)
    powers = rng.exponential(1.0, size=shape)
    for tgt in targets:
        r, theta, phi, snr_db = tgt
        idx = empty.locate(r, theta, phi)
        if idx is None:
            raise ValueError(f"target {tgt} lies outside the map extent")
        powers[idx] += 10.0 ** (snr_db / 10.0)
    return PowerMap(powers, **bins)


def false_alarm_rate(dets: list[Detection], shape, target_cells=()) -> float:
    targets = {tuple(t) for t in target_cells}
    n_false = sum(1 for d in dets if d.index not in targets)
    return n_false / (int(np.prod(shape)) - len(targets))


# --- binary format -------------------------------------------------------------
#
# little-endian; header 72 bytes:
#   0  4s   magic b"PMAP"
#   4  u32  version (1)
#   8  u32  range bins
#  12  u32  azimuth bins
#  16  u32  elevation bins (1 for 2-D maps)
#  20  u32  flags (bit 0: map is 2-D)
#  24  6xf64 r0, dr, theta0, dtheta, phi0, dphi
# then float32 powers, range-major (range, azimuth, elevation).

PMAP_MAGIC = b"PMAP"
_PMAP_HEADER = struct.Struct("<4sIIIII6d")


def encode_power_map(pmap: PowerMap) -> bytes:
    p = pmap.powers
    two_d = p.ndim == 2
    n_el = 1 if two_d else p.shape[2]
    head = _PMAP_HEADER.pack(PMAP_MAGIC, 1, p.shape[0], p.shape[1], n_el, int(two_d),
                             pmap.r0, pmap.dr, pmap.theta0, pmap.dtheta, pmap.phi0, pmap.dphi)
    return head + p.astype("<f4").tobytes()


def decode_power_map(buf: bytes) -> PowerMap:
    if len(buf) < _PMAP_HEADER.size:
        raise ValueError(f"power map truncated at byte {len(buf)}")
    magic, version, nr, na, ne, flags, *bins = _PMAP_HEADER.unpack_from(buf)
    if magic != PMAP_MAGIC:
        raise ValueError(f"bad magic {magic!r} at byte 0")
    if version != 1:
        raise ValueError(f"unsupported power map version {version} at byte 4")
    n = nr * na * ne
    if len(buf) != _PMAP_HEADER.size + 4 * n:
        raise ValueError(f"power map payload size mismatch: {len(buf)} bytes, expected {_PMAP_HEADER.size + 4 * n}")
    shape = (nr, na) if flags & 1 else (nr, na, ne)
    p = np.frombuffer(buf, dtype="<f4", count=n, offset=_PMAP_HEADER.size).astype(np.float64).reshape(shape)
    return PowerMap(p, *bins)


def write_power_map(path, pmap: PowerMap) -> None:
    Path(path).write_bytes(encode_power_map(pmap))


def read_power_map(path) -> PowerMap:
    return decode_power_map(Path(path).read_bytes())
