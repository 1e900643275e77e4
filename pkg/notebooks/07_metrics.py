"""
Comparing point clouds
======================

Chamfer distance, modified Hausdorff distance and F-score, plus the
empirical CDF of nearest-neighbour errors.
"""

import numpy as np

from rangediff.metrics import brute_chamfer, cdf_export, chamfer, evaluate, fscore, mhd

rng = np.random.default_rng(0)
truth = rng.uniform(-2, 2, (400, 3))
pred = truth + 0.1 * rng.standard_normal(truth.shape)
pred = np.vstack([pred, rng.uniform(-2, 2, (40, 3))])  # a few spurious points

print("CD ", round(chamfer(pred, truth), 4), "(brute force", round(brute_chamfer(pred, truth), 4), ")")
print("MHD", round(mhd(pred, truth), 4))
for tau in (0.1, 0.25, 0.5):
    p, r, f = fscore(pred, truth, tau)
    print(f"tau={tau}: precision {p:.1f}%  recall {r:.1f}%  F {f:.1f}%")

rep = evaluate(pred, truth)
table = cdf_export(rep)
for q in (0.5, 0.9, 0.99):
    print(f"{int(q * 100)}% of predicted points lie within {table[np.searchsorted(table[:, 1], q), 0]:.3f} m of the truth")
