"""Independent reference implementations shared by the unit and acceptance suites."""

import math

import numpy as np
from scipy.sparse.csgraph import connected_components


def brute_cfar(p, guard, train, k_rank, alpha, window="range"):
    """Per-cell loop: gather training cells, sort, pick rank ceil(k*m)-1."""
    hits = []
    nr, na = p.shape[:2]
    for idx in np.ndindex(p.shape):
        i, j = idx[0], idx[1]
        vals = []
        if window == "range":
            for o in range(-guard - train, guard + train + 1):
                if abs(o) > guard and 0 <= i + o < nr:
                    vals.append(p[(i + o,) + idx[1:]])
        else:
            for di in range(-guard - train, guard + train + 1):
                for dj in range(-guard - train, guard + train + 1):
                    if max(abs(di), abs(dj)) > guard and 0 <= i + di < nr and 0 <= j + dj < na:
                        vals.append(p[(i + di, j + dj) + idx[2:]])
        vals.sort()
        z = vals[math.ceil(k_rank * len(vals)) - 1]
        if p[idx] > alpha * z:
            hits.append(idx)
    return hits


def brute_dbscan(pts, eps, min_pts):
    """Dense-matrix reference: core points, connected components among cores,
    clusters numbered by their smallest core index; borders report every
    cluster they touch."""
    n = len(pts)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    adj = d <= eps
    core = adj.sum(1) >= min_pts
    cidx = np.flatnonzero(core)
    comp = np.full(n, -1)
    if len(cidx):
        _, lab = connected_components(adj[np.ix_(cidx, cidx)], directed=False)
        order = {}
        for i, l in zip(cidx, lab):
            order.setdefault(l, len(order))
        comp[cidx] = [order[l] for l in lab]
    allowed = [set(comp[cidx[adj[i, cidx]]]) if not core[i] else {comp[i]} for i in range(n)]
    return core, comp, allowed
