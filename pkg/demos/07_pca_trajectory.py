#!/usr/bin/env python3
"""One token's trajectory through a span, in PCA coordinates.

The PCA basis is fit on the ground-truth trajectory of a single
(image, token) pair; every method's rollout is projected into that same
basis, giving the 2-D curves that visualize how closely a recurrent linear
map tracks the real depth dynamics.
"""

from spandmd import FitConfig, ToySource, fit_operator
from spandmd.experiments import pca_trajectory_export, rollout_states

source = ToySource.default(seed=42, B_cal=48, B_eval=48)
i, p = 4, 3
calibration = source.calibration_span(i, p)
held_out = source.evaluation_span(i, p)

predictions = {}
for formulation in ("full", "anchored", "replaceme", "identity"):
    op = fit_operator(calibration, FitConfig(formulation=formulation, alpha=1e-5))
    predictions[formulation] = rollout_states(op, held_out)

table = pca_trajectory_export(held_out, predictions, token=0, image=0, k=2)

print(f"trajectory of the CLS token of image 0, span blocks {i + 1}..{i + p}\n")
print(f"{'method':<13} {'step':>4} {'pc1':>9} {'pc2':>9}")
for row in table.coords:
    print(f"{row['method']:<13} {row['step']:>4} {row['pc1']:>9.4f} {row['pc2']:>9.4f}")

print(f"\n{'method':<13} {'step':>4} {'cos':>8} {'rel_l2':>8}")
for row in table.step_metrics:
    print(f"{row['method']:<13} {row['step']:>4} {row['cos']:>8.4f} {row['rel_l2']:>8.4f}")
