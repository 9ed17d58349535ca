#!/usr/bin/env python3
"""Fitting all four replacement methods on a toy transformer span.

The toy model is a seeded pre-norm transformer with LayerScale and register
tokens. We cache a span of hidden states, fit the two one-step operator
formulations (full-state and anchored), the unconstrained endpoint map, and
keep the identity baseline, then compare their predictions on held-out
inputs.
"""

from spandmd import (
    FitConfig,
    evaluate,
    fit_operator,
    forward_with_taps,
    make_inputs,
    make_toy_model,
    predict,
)

model = make_toy_model(seed=42)
print(f"toy model: d={model.d}, t={model.t} ({model.t_kept} kept), L={model.L}")

i, p = 4, 3
calibration = forward_with_taps(model, make_inputs(model, 64, seed=1), i=i, p=p)
held_out = forward_with_taps(model, make_inputs(model, 128, seed=2), i=i, p=p)
print(f"span: blocks {i + 1}..{i + p} replaced, fit on 64 images, scored on 128\n")

print(f"{'method':<10} {'cos':>8} {'rel_l2':>8} {'r2':>8} {'norm':>8}")
for formulation in ("full", "anchored", "replaceme", "identity"):
    op = fit_operator(calibration, FitConfig(formulation=formulation, alpha=1e-5))
    record = evaluate(predict(op, held_out, p), held_out.states[p])
    print(f"{formulation:<10} {record.cos:>8.4f} {record.rel_l2:>8.4f} "
          f"{record.r2:>8.4f} {record.norm_ratio:>8.4f}")

print("\nintermediate steps from the same fitted operator (full formulation):")
op = fit_operator(calibration, FitConfig(formulation="full", alpha=1e-5))
for q in range(1, p + 1):
    record = evaluate(predict(op, held_out, q), held_out.states[q])
    print(f"  step {q}: cos={record.cos:.4f} rel_l2={record.rel_l2:.4f}")
