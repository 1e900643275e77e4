"""Point-cloud similarity: Chamfer distance, modified Hausdorff distance, F-score.

Nearest neighbours come from an exact k-d tree (scipy's cKDTree); the
``brute_*`` functions are O(n*m) references used to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud

DEFAULT_TAU = 0.25


def _pts(c) -> np.ndarray:
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64).reshape(-1, 3)


def _nonempty(*clouds):
    for c in clouds:
        if len(_pts(c)) == 0:
            raise ValueError("metric needs non-empty point clouds")


def nn_distances(a, b) -> np.ndarray:
    """Distance from each point of ``a`` to its nearest neighbour in ``b``."""
    pa, pb = _pts(a), _pts(b)
    if len(pb) == 0:
        raise ValueError("reference cloud is empty")
    if len(pa) == 0:
        return np.zeros(0)
    d, _ = cKDTree(pb).query(pa, k=1)
    return d


def chamfer(a, b) -> float:
    """mean(a->b) + mean(b->a), in meters."""
    _nonempty(a, b)
    return float(nn_distances(a, b).mean() + nn_distances(b, a).mean())


def mhd(a, b) -> float:
    """Dubuisson-Jain modified Hausdorff: max of the two directed mean distances."""
    _nonempty(a, b)
    return float(max(nn_distances(a, b).mean(), nn_distances(b, a).mean()))


def _prf(d_pred, d_true, tau):
    p = float(np.mean(d_pred <= tau)) * 100.0
    r = float(np.mean(d_true <= tau)) * 100.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def fscore(pred, truth, tau: float = DEFAULT_TAU):
    """(precision, recall, F) in percent at match threshold ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    _nonempty(pred, truth)
    return _prf(nn_distances(pred, truth), nn_distances(truth, pred), tau)


@dataclass
class MetricReport:
    cd: float
    mhd: float
    fscore: float
    precision: float
    recall: float
    tau: float
    d_pred_to_true: np.ndarray = field(repr=False)
    d_true_to_pred: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"cd": self.cd, "mhd": self.mhd, "fscore": self.fscore,
                "precision": self.precision, "recall": self.recall, "tau": self.tau,
                "n_pred": int(self.d_pred_to_true.size), "n_true": int(self.d_true_to_pred.size)}


def evaluate(pred, truth, tau: float = DEFAULT_TAU) -> MetricReport:
    _nonempty(pred, truth)
    dp, dt = nn_distances(pred, truth), nn_distances(truth, pred)
    p, r, f = _prf(dp, dt, tau)
    return MetricReport(float(dp.mean() + dt.mean()), float(max(dp.mean(), dt.mean())), f, p, r, tau, dp, dt)


def cdf_table(distances) -> np.ndarray:
    """Empirical CDF as (k, 2) rows of (distance, cumulative fraction), one row per distinct distance."""
    d = np.sort(np.asarray(distances, dtype=np.float64).ravel())
    if d.size == 0:
        raise ValueError("no distances")
    vals, counts = np.unique(d, return_counts=True)
    return np.column_stack([vals, np.cumsum(counts) / d.size])


def cdf_export(report: MetricReport, path=None) -> np.ndarray:
    """CDF of the prediction->truth distances; optionally written as two text columns."""
    table = cdf_table(report.d_pred_to_true)
    if path is not None:
        np.savetxt(Path(path), table, fmt="%.9g", header="distance_m cumulative_fraction")
    return table


# --- O(n*m) references ---------------------------------------------------------


def brute_nn(a, b) -> np.ndarray:
    pa, pb = _pts(a), _pts(b)
    out = np.empty(len(pa))
    for i, p in enumerate(pa):
        out[i] = np.sqrt(((pb - p) ** 2).sum(axis=1)).min()
    return out


def brute_chamfer(a, b) -> float:
    return float(brute_nn(a, b).mean() + brute_nn(b, a).mean())


def brute_mhd(a, b) -> float:
    return float(max(brute_nn(a, b).mean(), brute_nn(b, a).mean()))


def brute_fscore(pred, truth, tau=DEFAULT_TAU):
    return _prf(brute_nn(pred, truth), brute_nn(truth, pred), tau)
