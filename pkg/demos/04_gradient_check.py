#!/usr/bin/env python3
# Backprop through the gate against central finite differences, and proof the check has teeth.

from briges.gradcheck import TOLERANCE, check_gate_gradients

report = check_gate_gradients(seed=0, instances=20)
print(f"worst relative error {report.worst_error:.2e} on {report.worst_param} (tolerance {TOLERANCE:g})")
for name, err in sorted(report.errors.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {name:<12} {err:.2e}")

# two attention heads and the residual variant go through the same check
print("2 heads, residual:", check_gate_gradients(seed=1, instances=5, heads=2, residual=True).passed)

# doubling one gradient must be caught
broken = check_gate_gradients(seed=0, instances=1, fault="wk_s")
print(f"injected fault on wk_s -> passed={broken.passed}, worst {broken.worst_error:.2f} on {broken.worst_param}")
