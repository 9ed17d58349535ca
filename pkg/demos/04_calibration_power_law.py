#!/usr/bin/env python3
"""How much calibration data does the fit need?

The held-out error shrinks as the calibration budget B grows. Normalizing
by the largest-budget error and fitting the excess to C / B^gamma gives a
convergence exponent; on planted data the fitter is exact, and on the toy
model the exponents concentrate near gamma = 1.
"""

import warnings

import numpy as np

from spandmd import ToySource, fit_power_law
from spandmd.experiments import calibration_sweep

print("planted-law sanity check:")
for C, gamma in ((5.0, 1.0), (3.0, 0.5)):
    fit = fit_power_law([(b, C / b**gamma) for b in (10, 50, 100, 500)])
    print(f"  planted C={C}, gamma={gamma} -> fitted C={fit.C:.6f}, gamma={fit.gamma:.6f}")

source = ToySource.default(seed=42, B_cal=160, B_eval=64)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    res = calibration_sweep(source, budgets=[10, 20, 40, 80, 160], p=3)

print("\nnormalized held-out rel_l2 by budget (cut 4, full formulation):")
for rec in res.diagnostics:
    if rec["cut_start"] == 4 and rec["formulation"] == "full":
        print(f"  B={rec['budget']:>4}: {rec['norm_rel_l2']:.4f}")

for formulation in ("full", "anchored"):
    gammas = [f.gamma for (i, fm), f in res.fits.items()
              if fm == formulation and f is not None]
    print(f"\n{formulation}: fitted gamma median={np.median(gammas):.3f} "
          f"range=[{min(gammas):.3f}, {max(gammas):.3f}] over {len(gammas)} cuts")
