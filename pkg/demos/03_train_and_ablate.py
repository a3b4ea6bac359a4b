#!/usr/bin/env python3
# Gate-only training on the desk configuration, then a temperature sweep.
# Takes about half a minute single-threaded.

import numpy as np

from briges.metrics import average_rank
from briges.pipeline import ModelConfig, TrainConfig, build_model, evaluate, train
from briges.report import format_rank_table

cfg = ModelConfig()
held_out = list(range(1000, 1016))

# %% untrained gates against the hidden reference gates
model = build_model(cfg, gate_seed=1)
before, _ = evaluate(model, held_out, tau=1.0)
reference = build_model(cfg)
reference.set_gates(reference.reference)
exact, _ = evaluate(reference, held_out, tau=1.0)
print(f"reference gates: AbsRel {exact.absrel:.1e}  delta1 {exact.delta1}")
print(f"untrained gates: AbsRel {before.absrel:.4f}  delta1 {before.delta1:.4f}")

# %% encoders, decoder and reference gates stay frozen; only the four gates move
result = train(cfg, run_seed=1, tcfg=TrainConfig())
losses = np.array([loss for _, _, loss in result.log])
print(f"training loss {losses[0]:.4f} -> {losses[-1]:.4f} (ratio {losses[-1] / losses[0]:.3f})")
print("frozen digest unchanged:", result.digest_before == result.digest_after)
for step in (1, 100, 250, 400, 500):
    print(f"  step {step:>3}  lr {result.log[step - 1][1]:.5f}  loss {losses[step - 1]:.4f}")

after, _ = evaluate(result.model, held_out, tau=1.0)
print(f"trained gates, held-out seeds: AbsRel {after.absrel:.4f}  delta1 {after.delta1:.4f}")

# %% the temperature ablation: AbsRel and delta1 over four seed groups, ranked per column
taus = [2.0, 2.5, 3.0, 3.5, 4.0]
groups = np.array_split(np.array(held_out), 4)
table = []
for tau in taus:
    row = []
    for g in groups:
        agg, _ = evaluate(result.model, [int(s) for s in g], tau)
        row += [agg.absrel, agg.delta1]
    table.append(row)
ranks = average_rank(np.array(table), [True, False] * 4)
print(format_rank_table(taus, ranks))
