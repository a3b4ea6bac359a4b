#!/usr/bin/env python3
# The training objective and the evaluation protocol on hand-made rasters.

import numpy as np

from briges.losses import (
    affine_invariant_loss, combined_loss, depth_to_normalized_disparity, gradient_matching_loss, ssi_normalize,
)
from briges.maps import DepthMap
from briges.metrics import average_rank, evaluate_depth, pairwise_accuracy

rng = np.random.default_rng(1)

# %% ground truth: a tilted plane with a box in front of it
yy, xx = np.mgrid[0:24, 0:32]
depth = 4.0 + 0.1 * yy
depth[8:16, 10:20] = 2.0
gt = depth_to_normalized_disparity(DepthMap(depth))
print("normalized disparity range:", gt.values.min(), gt.values.max())
print("ssi-normalized median / mean |.|:", np.median(ssi_normalize(gt).data), np.abs(ssi_normalize(gt).data).mean())

# %% the loss ignores scale and shift of the prediction
pred = gt.values + rng.normal(scale=0.05, size=gt.shape)
for a, b in [(1, 0), (3, 7), (0.2, -5)]:
    print(f"pred*{a}+{b}: affine-invariant {affine_invariant_loss(a * pred + b, gt).item():.6f}")

# %% gradient matching only cares about where the errors sit
blurred = gt.values.copy()
blurred[7:17, 9:21] = 0.5 * (blurred[7:17, 9:21] + gt.values.mean())
print("blurred box:  ssi %.4f  gm %.4f  v2 %.4f" % (
    affine_invariant_loss(blurred, gt).item(), gradient_matching_loss(blurred, gt).item(),
    combined_loss(blurred, gt, "v2").item()))

# %% evaluation: align in depth space, then AbsRel and delta1
est = 0.5 * depth + 1.0 + rng.normal(scale=0.2, size=depth.shape)
rep = evaluate_depth(DepthMap(est), DepthMap(depth))
print(f"AbsRel {rep.absrel:.4f}  delta1 {rep.delta1:.4f}  scale {rep.scale:.3f}  shift {rep.shift:.3f}")

# %% DA-2K style ordering on a few pairs, and ranking a small table of settings
pairs = [((10, 12), (2, 2), "a"), ((20, 5), (1, 30), "b"), ((12, 15), (12, 25), "a")]
print("pairwise accuracy:", pairwise_accuracy(DepthMap(est), pairs))
table = np.array([[0.080, 0.95], [0.074, 0.96], [0.077, 0.96]])
print("average rank (absrel lower, delta1 higher):", average_rank(table, [True, False]))
