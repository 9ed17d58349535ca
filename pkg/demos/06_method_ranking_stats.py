#!/usr/bin/env python3
"""Is the method ordering statistically meaningful?

Each (cut start, prune length) configuration ranks the four methods; the
Friedman test asks whether the average ranks could be chance, and the
Nemenyi critical difference says how far two average ranks must be apart
to call them different. Note the caveat: adjacent configurations share
evaluation data, so this is a coarse ordering check.
"""

import numpy as np

from spandmd import ToySource, friedman_nemenyi, nemenyi_cd
from spandmd.experiments import headline_sweep
from spandmd.stats import format_rank_table

source = ToySource.default(seed=42, B_cal=32, B_eval=32, L=10)
result = headline_sweep(source, p_values=[1, 2, 3, 4])

methods = ("anchored", "full", "identity", "replaceme")
rows = {}
for r in result:
    if r.step != r.prune_length or r.token_group != "all":
        continue
    rows.setdefault((r.cut_start, r.prune_length), {})[r.formulation] = r.metrics

configs = sorted(k for k, v in rows.items() if len(v) == len(methods))
cos = np.array([[rows[c][m].cos for m in methods] for c in configs])
rel = np.array([[rows[c][m].rel_l2 for m in methods] for c in configs])

results = {
    "cos": friedman_nemenyi(cos, better="higher"),
    "rel_l2": friedman_nemenyi(rel, better="lower"),
}
print(format_rank_table(results, list(methods)))
for metric, res in results.items():
    p_str = f"{res.p_value:.3e}" if res.p_value > 0 else f"10^{res.log10_p:.0f}"
    print(f"# {metric}: chi2={res.chi2:.1f}, p={p_str}, n={res.n}")
print(f"# caveat: {results['cos'].caveat}")

print("\ncritical differences at reference sample counts:")
for n in (165, 245, 325):
    print(f"  k=4, n={n}: CD = {nemenyi_cd(4, n):.3f}")
