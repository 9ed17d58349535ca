"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion.
"""

import time

import numpy as np
import pytest

from spandmd.experiments import calibration_sweep, headline_sweep
from spandmd.metrics import (
    cosine_similarity,
    norm_ratio,
    r2_brh,
    relative_l2,
)
from spandmd.operators import (
    FitConfig,
    endpoint_mse,
    fit_operator,
    fit_replaceme,
    predict,
)
from spandmd.snapshot import SpanDims, stack_pairs
from spandmd.sources import ToySource
from spandmd.stats import candidate_constants, fit_power_law, nemenyi_cd
from spandmd.toymodel import (
    block_forward,
    fold_layerscale,
    forward_with_taps,
    generate_linear_span,
    make_inputs,
    make_toy_model,
    random_linear_system,
)


def report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def toy_model():
    return make_toy_model(seed=42)


@pytest.fixture(scope="module")
def default_source():
    # default toy dims: d=32, t=21 (1 cls + 4 register + 16 patch), L=12,
    # 64 calibration / 128 evaluation images
    return ToySource.default(seed=42)


def test_exact_linear_recovery():
    t0 = time.perf_counter()
    system = random_linear_system(8, rho=0.9, seed=0)
    dims = SpanDims(d=8, t=5, B=8, p=10, i=0, L=10, n_register=0)
    span = generate_linear_span(system, dims, seed=1)
    assert stack_pairs(span).M >= 400
    op = fit_operator(span, FitConfig(formulation="full", alpha=0.0))
    k_err = np.abs(op.K - system.K).max()
    worst_rel = max(
        relative_l2(predict(op, span, q), span.states[q]) for q in range(1, 11)
    )
    elapsed = time.perf_counter() - t0
    report(
        "exact linear recovery",
        k_err <= 1e-8 and worst_rel <= 1e-6 and elapsed < 1.0,
        f"|K-K*|={k_err:.2e}, worst rel_l2={worst_rel:.2e}, {elapsed:.3f}s",
    )


def test_folding_exactness(toy_model):
    rng = np.random.default_rng(123)
    worst = 0.0
    for blk in toy_model.blocks:
        x = rng.standard_normal((toy_model.d, toy_model.t, 100))
        raw = block_forward(blk, x)
        folded = block_forward(fold_layerscale(blk), x)
        worst = max(worst, np.abs(raw - folded).max() / np.abs(raw).max())
    report("folding exactness", worst <= 1e-6, f"max rel deviation {worst:.2e}")


def test_tap_identity(toy_model):
    worst = 0.0
    for seed in (0, 1, 2):
        inputs = make_inputs(toy_model, 8, seed=seed)
        for i, p in [(1, 1), (4, 3), (6, 5), (9, 3)]:
            span = forward_with_taps(toy_model, inputs, i=i, p=p)
            err = np.abs((span.states[0] - span.anchor) - span.mlp_tap).max()
            worst = max(worst, err / np.abs(span.mlp_tap).max())
    report("tap identity", worst <= 1e-5, f"worst scaled residual {worst:.2e}")


def test_full_rank_solver_agreement(toy_model):
    worst = 0.0
    spans = []
    for seed in (0, 1):
        inputs = make_inputs(toy_model, 12, seed=100 + seed)
        for i in range(1, 11):
            spans.append(forward_with_taps(toy_model, inputs, i=i, p=2))
    assert len(spans) == 20
    for span in spans:
        pair = stack_pairs(span)
        kp = fit_operator(span, FitConfig(formulation="full", solver="pcr", alpha=1e-5))
        kr = fit_operator(span, FitConfig(formulation="full", solver="rrr", alpha=1e-5))
        gap = np.linalg.norm((kp.K - kr.K) @ pair.Z) / np.linalg.norm(pair.Zp)
        worst = max(worst, gap)
    report("full-rank solver agreement", worst <= 1e-6,
           f"worst prediction gap {worst:.2e} over {len(spans)} spans")


def test_endpoint_optimality(toy_model):
    inputs = make_inputs(toy_model, 16, seed=7)
    worst_margin = -np.inf
    cells = 0
    for p in (2, 3, 5):
        for i in range(1, toy_model.L - p + 1):
            span = forward_with_taps(toy_model, inputs, i=i, p=p)
            rm = fit_replaceme(span, alpha=0.0)
            anch = fit_operator(span, FitConfig(formulation="anchored", alpha=0.0))
            margin = endpoint_mse(rm, span) - endpoint_mse(anch, span)
            worst_margin = max(worst_margin, margin)
            cells += 1
    report("endpoint optimality", worst_margin <= 1e-12,
           f"worst (replaceme - anchored) MSE margin {worst_margin:.2e} over {cells} cells")


def test_nemenyi_constants():
    checks = [(245, 0.300), (325, 0.260), (165, 0.365)]
    worst = max(abs(nemenyi_cd(4, n) - expected) for n, expected in checks)
    report("nemenyi critical differences", worst <= 1e-3, f"worst |CD error| {worst:.2e}")


def test_candidate_constants():
    a = candidate_constants(1280, 197, 5)
    b = candidate_constants(1536, 257, 5)
    ok = (
        round(a.d_over_t, 2) == 6.50
        and round(a.d_over_tp, 2) == 1.30
        and round(b.d_over_t, 2) == 5.98
        and round(b.d_over_tp, 2) == 1.20
    )
    report("candidate constants", ok,
           f"d/t={a.d_over_t:.4f},{b.d_over_t:.4f} d/tp={a.d_over_tp:.4f},{b.d_over_tp:.4f}")


def test_power_law_recovery():
    budgets = (10, 50, 100, 500)
    noiseless_ok = True
    for C, gamma in ((5.0, 1.0), (3.0, 0.5)):
        fit = fit_power_law([(b, C / b**gamma) for b in budgets])
        noiseless_ok &= abs(fit.C - C) <= 1e-6 and abs(fit.gamma - gamma) <= 1e-6
    hits = 0
    for trial in range(100):
        rng = np.random.default_rng(2000 + trial)
        B = np.unique(np.round(np.logspace(1.0, 3.0, 20)).astype(int)).astype(float)
        values = 5.0 / B * (1.0 + 0.05 * rng.standard_normal(B.size))
        fit = fit_power_law(list(zip(B, values)))
        hits += abs(fit.gamma - 1.0) <= 0.1
    report("power-law recovery", noiseless_ok and hits >= 95,
           f"noiseless ok={noiseless_ok}, noisy hits={hits}/100")


def test_metric_identities():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((16, 5, 4))
    checks = {
        "cos(x,x)=1": abs(cosine_similarity(x, x) - 1.0),
        "rel(x,x)=0": abs(relative_l2(x, x)),
        "rel(x,-x)=2": abs(relative_l2(-x, x) - 2.0),
        "r2 shift": abs(r2_brh(x + 11.3, x) - 1.0),
        "norm_ratio scale": abs(norm_ratio(2.5 * x, x) - 2.5),
    }
    worst = max(checks.values())
    report("metric identities", worst <= 1e-12,
           ", ".join(f"{k}:{v:.1e}" for k, v in checks.items()))


def test_baseline_ordering(default_source):
    t0 = time.perf_counter()
    result = headline_sweep(default_source, p_values=[3])
    elapsed = time.perf_counter() - t0
    endpoint = lambda r: r.step == r.prune_length
    medians = {
        key[0]: agg.median
        for key, agg in result.summarize(metric="cos", by=("formulation",),
                                         where=endpoint).items()
    }
    ok = all(medians[m] >= medians["identity"] for m in ("full", "anchored", "replaceme"))
    report("baseline ordering", ok and elapsed < 60.0,
           "median cos: " + ", ".join(f"{m}={v:.4f}" for m, v in sorted(medians.items()))
           + f"; {elapsed:.1f}s")


def test_determinism():
    def one_run():
        source = ToySource.default(seed=42, B_cal=24, B_eval=24, L=8)
        headline = headline_sweep(source, p_values=[1, 2, 3]).to_csv_string()
        calib = calibration_sweep(source, budgets=[6, 12, 24], p=2,
                                  starts=[1, 2]).sweep.to_csv_string()
        return headline + calib

    report("determinism", one_run() == one_run(), "byte-identical CSV on rerun")
