#!/usr/bin/env python3
# One Bridging Gate on random features, then what temperature does to its attention.

import numpy as np

from briges.autodiff import Tensor
from briges.features import FeatureMap, align_semantic
from briges.gate import GateParams, attention_entropy, gate_forward

rng = np.random.default_rng(0)

# %% depth tokens on an 8x8 grid, a semantic map on 16x16 brought down to the same grid
C = 16
f_d = FeatureMap(8, 8, Tensor(rng.normal(size=(64, C))))
f_s = align_semantic(FeatureMap(16, 16, Tensor(rng.normal(size=(256, C)))), f_d.grid)
print("aligned semantic grid:", f_s.grid, "channels:", f_s.channels)

# %% cross-attention (depth queries semantic) followed by self-attention
params = GateParams.initialize(C, C, rng, gain=2.0)
out, records = gate_forward(f_d, f_s, params, tau=1.0)
print("fused map:", out.grid, out.channels)
for rec in records:
    print(f"{rec.block:>5} block  rows sum to 1: {np.allclose(rec.weights.sum(1), 1)}")

# %% temperature flattens the cross attention but never changes which key wins
cross = {}
for tau in (1.0, 2.0, 2.5, 3.0, 4.0):
    _, recs = gate_forward(f_d, f_s, params, tau)
    cross[tau] = recs[0].weights
    h = attention_entropy(recs[0])
    print(f"tau={tau:<4} mean entropy {h.mean():.4f} nats  (uniform would be {np.log(64):.4f})  "
          f"max weight {recs[0].weights.max():.3f}")

same_argmax = all(np.array_equal(w.argmax(1), cross[1.0].argmax(1)) for w in cross.values())
print("argmax unchanged across tau:", same_argmax)
