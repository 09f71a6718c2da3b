"""Control the false-negative rate of segmentation masks.

Each pixel score is thresholded at ``1 - lambda``. The calibration picks the
smallest lambda whose Hoeffding upper bound on the FNR stays below alpha
for it and every larger lambda, so the FNR on new images is at most alpha
with probability at least ``1 - delta``.
"""

import numpy as np

from conformal_kit import WorldSpec, fnr_loss_table, risk_curve, risk_over_splits, sample_dataset, select_lambda, true_risk
from conformal_kit.rcps import default_lambda_grid, mask_size_table

ALPHA, DELTA = 0.1, 0.1

world = WorldSpec("segmentation_blobs", seed=3)
data = sample_dataset(world, 2000)
grid = default_lambda_grid()
table = fnr_loss_table(data.labels, data.outputs, grid)

cal = table.subset(np.arange(1000))
art = select_lambda(cal, ALPHA, DELTA)
curve = risk_curve(cal, DELTA)
j = int(art.metadata["index"])
print(f"lambda-hat={art.threshold:.4f} (pixel threshold {1 - art.threshold:.4f})")
print(f"  calibration FNR {curve.empirical_risk[j]:.4f}, upper bound {curve.ucb[j]:.4f}")
print(f"  FNR on fresh images {true_risk(world, art, n_fresh=5000).value:.4f}")

# Repeat over random splits: the bound should fail in at most ~delta of them.
sizes = mask_size_table(data.outputs, grid)
rep = risk_over_splits(table, ALPHA, DELTA, n_cal=1000, n_splits=100, seed=0, sizes=sizes)
s = rep.summary()
print(f"100 splits: mean FNR {s['mean_risk']:.4f}, max {s['max_risk']:.4f}, "
      f"violations {s['violation_rate']:.2f}, mean mask size {s['mean_size']:.1f} px")
