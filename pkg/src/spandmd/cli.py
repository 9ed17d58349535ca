"""Command-line orchestration: generate, fit, sweep, stats.

Exit codes are a stable contract: 0 success, 2 usage error, 3 validation
or formulation error, 4 sweep produced no rows. Every command is
deterministic given (flags, seed); the effective configuration is echoed
into the output manifest for provenance. The default seed can be set with
the SPANDMD_SEED environment variable; explicit flags win over a config
file, which wins over the environment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, stats
from .errors import SpandmdError, ValidationError
from .operators import (
    DEFAULT_ALPHA,
    FitConfig,
    endpoint_mse,
    fit_operator,
    predict,
    save_operator,
)
from .metrics import evaluate
from .snapshot import SpanDims, read_span, stack_pairs, write_span
from .sources import FileSource, LinearSource, ToySource
from .toymodel import (
    forward_with_taps,
    generate_linear_span,
    make_inputs,
    make_toy_model,
    random_linear_system,
)

BUILTIN_SEED = 42


class NoRowsError(SpandmdError):
    """A sweep finished without producing any rows."""


def _env_seed() -> int:
    raw = os.environ.get("SPANDMD_SEED")
    if raw is None:
        return BUILTIN_SEED
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"SPANDMD_SEED must be an integer, got {raw!r}")


def _load_config_file(path):
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    return cfg


def _setting(args, cfg, name, default):
    """flags > config file > default (the default may come from the env)."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in cfg:
        return cfg[name]
    return default


def _parse_int_list(text):
    """Accept '1,3,5' and '1..10' (inclusive) range syntax."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValidationError(f"empty integer list: {text!r}")
    return out


def _parse_ranks(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if part == "full":
            out.append(None)
        elif part:
            out.append(int(part))
    return out


def _rank_arg(text):
    if text is None or text == "full":
        return None
    return int(text)


def _write_manifest(out_dir: Path, payload: dict) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=2)
    (out_dir / "manifest.json").write_text(text + "\n")
    return payload


def _make_source(args, cfg, seed):
    kind = _setting(args, cfg, "source", "toy")
    if kind == "toy":
        return ToySource.default(
            seed=seed,
            B_cal=int(_setting(args, cfg, "b_cal", 64)),
            B_eval=int(_setting(args, cfg, "b_eval", 128)),
            d=int(_setting(args, cfg, "d", 32)),
            t=int(_setting(args, cfg, "t", 21)),
            n_register=int(_setting(args, cfg, "n_register", 4)),
            L=int(_setting(args, cfg, "L", 12)),
            d_ff=int(_setting(args, cfg, "d_ff", 128)),
            heads=int(_setting(args, cfg, "heads", 4)),
        )
    if kind == "linear":
        return LinearSource.default(
            seed=seed,
            d=int(_setting(args, cfg, "d", 8)),
            rho=float(_setting(args, cfg, "rho", 0.9)),
            L=int(_setting(args, cfg, "L", 12)),
            t_kept=int(_setting(args, cfg, "t_kept", 5)),
            B_cal=int(_setting(args, cfg, "b_cal", 64)),
            B_eval=int(_setting(args, cfg, "b_eval", 128)),
        )
    path = Path(kind)
    if path.is_dir():
        eval_dir = getattr(args, "eval_dir", None)
        return FileSource(path, eval_dir)
    raise ValidationError(f"unknown source {kind!r} (expected toy, linear, or a directory)")


def _emit_sweep(result, out_dir: Path, name: str, args, manifest_extra=None):
    if len(result) == 0:
        raise NoRowsError(f"{name} sweep produced no rows")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    result.to_csv(csv_path)
    outputs = {"csv": csv_path.name}
    if getattr(args, "jsonl", False):
        jsonl_path = out_dir / f"{name}.jsonl"
        result.to_jsonl(jsonl_path)
        outputs["jsonl"] = jsonl_path.name
    cap = getattr(args, "cap_rel_l2", None)
    if cap is not None:
        plot_path = out_dir / f"{name}_plot.csv"
        result.to_csv(plot_path, cap_rel_l2=cap)
        outputs["plot_csv"] = plot_path.name
    manifest = {
        "command": f"sweep {name}",
        "provenance": result.provenance,
        "rows": len(result),
        "outputs": outputs,
    }
    manifest.update(manifest_extra or {})
    _write_manifest(out_dir, manifest)
    return manifest


def _print_summary(result, metric="cos", by=("formulation", "prune_length"),
                   where=None, **conditions):
    summary = result.summarize(metric=metric, by=by, where=where, **conditions)
    print(f"# median {metric} (IQR) by {', '.join(by)}")
    for key, agg in summary.items():
        label = " ".join(str(k) for k in key)
        print(f"{label}: {agg.median:.4f} ({agg.q25:.4f}..{agg.q75:.4f}) n={agg.n}")


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    cuts = _parse_int_list(_setting(args, cfg, "cut", "4"))
    ps = _parse_int_list(_setting(args, cfg, "p", "3"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = _setting(args, cfg, "source", "toy")
    B = int(_setting(args, cfg, "B", 64))

    files = []
    if kind == "toy":
        model = make_toy_model(
            seed=seed,
            d=int(_setting(args, cfg, "d", 32)),
            t=int(_setting(args, cfg, "t", 21)),
            n_register=int(_setting(args, cfg, "n_register", 4)),
            L=int(_setting(args, cfg, "L", 12)),
            d_ff=int(_setting(args, cfg, "d_ff", 128)),
            heads=int(_setting(args, cfg, "heads", 4)),
        )
        inputs = make_inputs(model, B, seed=seed + 1)
        for i in cuts:
            for p in ps:
                span = forward_with_taps(model, inputs, i, p)
                path = out_dir / f"span_i{i}_p{p}.sdms"
                nbytes = write_span(span, path)
                read_span(path)  # post-generation validation pass
                files.append({"path": path.name, "i": i, "p": p, "bytes": nbytes,
                              "d": span.dims.d, "t_kept": span.dims.t_kept, "B": B})
        source_desc = {"kind": "toy", "model": json.loads(model.to_spec())}
    elif kind == "linear":
        d = int(_setting(args, cfg, "d", 8))
        system = random_linear_system(d, rho=float(_setting(args, cfg, "rho", 0.9)), seed=seed)
        t_kept = int(_setting(args, cfg, "t_kept", 5))
        L = int(_setting(args, cfg, "L", 12))
        for i in cuts:
            for p in ps:
                dims = SpanDims(d=d, t=t_kept, B=B, p=p, i=i, L=max(L, i + p), n_register=0)
                span = generate_linear_span(system, dims, seed=seed + 1)
                path = out_dir / f"span_i{i}_p{p}.sdms"
                nbytes = write_span(span, path)
                back = read_span(path)  # post-generation validation pass
                pair = stack_pairs(back)
                shift_err = float(np.abs(pair.Zp - system.K @ pair.Z).max())
                if shift_err > 1e-5 * max(float(np.abs(pair.Zp).max()), 1e-30):
                    raise ValidationError(f"generated span violates the shift property ({shift_err:.3e})")
                files.append({"path": path.name, "i": i, "p": p, "bytes": nbytes,
                              "d": d, "t_kept": t_kept, "B": B})
        source_desc = {"kind": "linear", "d": d, "seed": seed}
    else:
        raise ValidationError(f"unknown generate source {kind!r}")

    manifest = _write_manifest(out_dir, {
        "command": "generate",
        "source": source_desc,
        "seed": seed,
        "files": files,
        "validated": True,
    })
    print(json.dumps(manifest, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    cfg = _load_config_file(args.config)
    span = read_span(args.infile)
    config = FitConfig(
        formulation=_setting(args, cfg, "formulation", "full"),
        solver=_setting(args, cfg, "solver", "pcr"),
        rank=_rank_arg(_setting(args, cfg, "rank", None)),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
    )
    op = fit_operator(span, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_operator(op, out)

    per_step = {}
    steps = [span.dims.p] if config.formulation == "replaceme" else range(1, span.dims.p + 1)
    for q in steps:
        record = evaluate(predict(op, span, q), span.states[q])
        per_step[str(q)] = {
            "cos": record.cos, "rel_l2": record.rel_l2,
            "r2": record.r2, "norm_ratio": record.norm_ratio,
        }
    report = {
        "command": "fit",
        "config": {
            "formulation": config.formulation, "solver": config.solver,
            "rank": config.rank, "alpha": config.alpha,
        },
        "effective_rank": op.effective_rank,
        "train_mse": op.train_mse,
        "endpoint_mse": endpoint_mse(op, span),
        "metrics_per_step": per_step,
        "operator": {"json": out.with_suffix(".json").name, "bin": out.with_suffix(".bin").name},
    }
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------------------
# sweep subcommands


def cmd_sweep_headline(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    p_values = _parse_int_list(_setting(args, cfg, "p", "1..10"))
    formulations = str(_setting(args, cfg, "formulations", ",".join(experiments.DEFAULT_FORMULATIONS))).split(",")
    result = experiments.headline_sweep(
        source, p_values=p_values, formulations=formulations,
        solver=_setting(args, cfg, "solver", "pcr"),
        rank=_rank_arg(_setting(args, cfg, "rank", None)),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        jobs=args.jobs,
    )
    _emit_sweep(result, Path(args.out), "headline", args, {"seed": seed})
    endpoint = lambda r: r.step == r.prune_length
    for metric in ("cos", "rel_l2"):
        _print_summary(result, metric=metric, where=endpoint)
    return 0


def cmd_sweep_rank(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    ranks = _parse_ranks(_setting(args, cfg, "ranks", "4,8,16,full"))
    solvers = str(_setting(args, cfg, "solvers", "pcr,rrr")).split(",")
    res = experiments.rank_sweep(
        source, ranks=ranks, solvers=solvers,
        formulations=str(_setting(args, cfg, "formulations", "full,anchored")).split(","),
        p=int(_setting(args, cfg, "p", 3)),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        jobs=args.jobs,
    )
    out_dir = Path(args.out)
    _emit_sweep(res.sweep, out_dir, "rank", args, {"seed": seed})
    if res.deltas:
        import csv as _csv

        with open(out_dir / "rank_deltas.csv", "w", newline="") as fh:
            writer = _csv.DictWriter(
                fh, fieldnames=["cut_start", "formulation", "rank", "cos_delta", "rel_l2_delta"],
                lineterminator="\n",
            )
            writer.writeheader()
            for row in res.deltas:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _print_summary(res.sweep, metric="cos", by=("formulation", "solver", "rank"))
    return 0


def cmd_sweep_calib(args) -> int:
    cfg = _load_config_file(args.config)
    if args.points is not None:
        # fixture mode: fit the power law directly to (B, value) points
        points = []
        with open(args.points, newline="") as fh:
            import csv as _csv

            for rec in _csv.DictReader(fh):
                points.append((float(rec["B"]), float(rec["value"])))
        fit = stats.fit_power_law(points, form=args.form)
        print(json.dumps({
            "C": fit.C, "gamma": round(fit.gamma, 6), "residual": fit.residual,
            "model_form": fit.model_form, "converged": fit.converged,
        }, sort_keys=True))
        return 0

    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    budgets = _parse_int_list(_setting(args, cfg, "budgets", ",".join(map(str, experiments.DEFAULT_BUDGETS))))
    reference = _setting(args, cfg, "reference", None)
    res = experiments.calibration_sweep(
        source, budgets=budgets,
        reference_B=None if reference is None else int(reference),
        formulations=str(_setting(args, cfg, "formulations", "full,anchored")).split(","),
        p=int(_setting(args, cfg, "p", 3)),
        solver=_setting(args, cfg, "solver", "pcr"),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        jobs=args.jobs,
    )
    out_dir = Path(args.out)
    _emit_sweep(res.sweep, out_dir, "calib", args, {"seed": seed})
    import csv as _csv

    with open(out_dir / "calib_diagnostics.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(
            fh, fieldnames=["cut_start", "formulation", "budget", "rel_l2",
                            "norm_rel_l2", "mse_gap", "tcov_dist"],
            lineterminator="\n",
        )
        writer.writeheader()
        for row in res.diagnostics:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    fits_payload = {
        f"i={i},formulation={form}": None if fit is None else {
            "C": fit.C, "gamma": fit.gamma, "residual": fit.residual,
            "model_form": fit.model_form, "converged": fit.converged,
        }
        for (i, form), fit in sorted(res.fits.items())
    }
    (out_dir / "powerlaw.json").write_text(json.dumps(fits_payload, sort_keys=True, indent=2) + "\n")
    gammas = [fit.gamma for fit in res.fits.values() if fit is not None]
    if gammas:
        print(f"fitted gamma: median={np.median(gammas):.3f} "
              f"range=[{min(gammas):.3f}, {max(gammas):.3f}] over {len(gammas)} configs")
    return 0


def cmd_sweep_extrap(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    starts_setting = _setting(args, cfg, "starts", None)
    starts = None if starts_setting is None else _parse_int_list(starts_setting)
    result = experiments.extrapolation_sweep(
        source, starts=starts,
        max_n=int(_setting(args, cfg, "max_n", 10)),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        jobs=args.jobs,
    )
    _emit_sweep(result, Path(args.out), "extrap", args, {"seed": seed})
    _print_summary(result, metric="cos", by=("step",))
    return 0


def cmd_sweep_downstream(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    result = experiments.downstream_eval(
        source,
        p=int(_setting(args, cfg, "p", 3)),
        solver=_setting(args, cfg, "solver", "pcr"),
        rank=_rank_arg(_setting(args, cfg, "rank", None)),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        jobs=args.jobs,
    )
    _emit_sweep(result, Path(args.out), "downstream", args, {"seed": seed})
    local, downstream, spearman = experiments.location_orderings(result)
    print(f"local ordering (best first):      {' > '.join(local)}")
    print(f"downstream ordering (best first): {' > '.join(downstream)}")
    print(f"spearman rank correlation: {spearman:.3f}")
    return 0


def cmd_sweep_tokens(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    p_values = _parse_int_list(_setting(args, cfg, "p", "1..10"))
    _, operators = experiments.headline_sweep(
        source, p_values=p_values,
        formulations=str(_setting(args, cfg, "formulations", ",".join(experiments.DEFAULT_FORMULATIONS))).split(","),
        solver=_setting(args, cfg, "solver", "pcr"),
        rank=_rank_arg(_setting(args, cfg, "rank", None)),
        alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        return_operators=True, jobs=args.jobs,
    )
    result = experiments.token_breakdown(source, operators, jobs=args.jobs)
    _emit_sweep(result, Path(args.out), "tokens", args, {"seed": seed})
    _print_summary(result, metric="cos", by=("token_group", "prune_length"))
    return 0


def cmd_sweep_pca(args) -> int:
    cfg = _load_config_file(args.config)
    seed = int(_setting(args, cfg, "seed", _env_seed()))
    source = _make_source(args, cfg, seed)
    i = int(_setting(args, cfg, "cut", 4))
    p = int(_setting(args, cfg, "p", 3))
    cal = source.calibration_span(i, p)
    ev = source.evaluation_span(i, p)
    formulations = str(_setting(args, cfg, "formulations", ",".join(experiments.DEFAULT_FORMULATIONS))).split(",")
    predictions = {}
    for formulation in formulations:
        op = fit_operator(cal, FitConfig(
            formulation=formulation,
            solver=_setting(args, cfg, "solver", "pcr"),
            rank=_rank_arg(_setting(args, cfg, "rank", None)),
            alpha=float(_setting(args, cfg, "alpha", DEFAULT_ALPHA)),
        ))
        predictions[formulation] = experiments.rollout_states(op, ev)
    table = experiments.pca_trajectory_export(
        ev, predictions,
        token=int(_setting(args, cfg, "token", 0)),
        image=int(_setting(args, cfg, "image", 0)),
        k=int(_setting(args, cfg, "components", 2)),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    import csv as _csv

    pc_fields = sorted({k for row in table.coords for k in row if k.startswith("pc")})
    with open(out_dir / "pca_coords.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["method", "step"] + pc_fields, lineterminator="\n")
        writer.writeheader()
        for row in table.coords:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    with open(out_dir / "pca_metrics.csv", "w", newline="") as fh:
        cap = getattr(args, "cap_rel_l2", None)
        writer = _csv.DictWriter(fh, fieldnames=["method", "step", "cos", "rel_l2"], lineterminator="\n")
        writer.writeheader()
        for row in table.step_metrics:
            rel = row["rel_l2"] if cap is None else min(row["rel_l2"], cap)
            writer.writerow({"method": row["method"], "step": row["step"],
                             "cos": repr(row["cos"]), "rel_l2": repr(rel)})
    _write_manifest(out_dir, {
        "command": "sweep pca", "cut": i, "p": p, "seed": seed,
        "source": source.source_id,
        "outputs": {"coords": "pca_coords.csv", "metrics": "pca_metrics.csv"},
    })
    print(f"wrote {len(table.coords)} projected points for cut {i}, p={p}")
    return 0


def cmd_sweep_stats(args) -> int:
    rows = experiments.read_sweep_csv(args.infile)
    rows = [r for r in rows if r["token_group"] == "all"
            and r["location"] == args.location and r["step"] == r["prune_length"]]
    if not rows:
        raise NoRowsError("no endpoint rows found in the input CSV")
    methods = sorted({r["formulation"] for r in rows})
    configs = sorted({(r["cut_start"], r["prune_length"]) for r in rows})
    results = {}
    for metric, better in (("cos", "higher"), ("rel_l2", "lower")):
        matrix, kept = [], []
        for key in configs:
            vals = {}
            for r in rows:
                if (r["cut_start"], r["prune_length"]) == key:
                    vals[r["formulation"]] = r[metric]
            if len(vals) == len(methods):
                matrix.append([vals[m] for m in methods])
                kept.append(key)
        if len(matrix) < 2:
            raise NoRowsError(f"not enough complete configurations for metric {metric}")
        results[metric] = stats.friedman_nemenyi(np.array(matrix), better=better,
                                                 alpha=args.alpha_level)
    table = stats.format_rank_table(results, methods)
    print(table)
    for metric, res in results.items():
        p_str = f"{res.p_value:.3e}" if res.p_value > 0 else f"10^{res.log10_p:.1f}"
        print(f"# {metric}: friedman chi2={res.chi2:.2f}, p={p_str}, n={res.n}, CD={res.cd:.3f}")
    print(f"# note: {stats.SHARED_DATA_CAVEAT}")
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        import csv as _csv

        with open(out_dir / "ranks.csv", "w", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["method"] + [f"avg_rank_{m}" for m in results])
            for j, m in enumerate(methods):
                writer.writerow([m] + [repr(float(results[k].avg_ranks[j])) for k in results])
            writer.writerow(["CD"] + [repr(results[k].cd) for k in results])
        (out_dir / "ranks.txt").write_text(table + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spandmd",
        description="Linear-operator replacement of residual-network block spans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_jobs=True):
        p.add_argument("--config", help="JSON config file (flags win over its values)")
        p.add_argument("--seed", type=int, help="master seed (default: SPANDMD_SEED or 42)")
        if with_jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel row workers")

    def add_source(p):
        p.add_argument("--source", help="toy | linear | directory of .sdms files")
        p.add_argument("--eval-dir", dest="eval_dir", help="evaluation files for a directory source")
        p.add_argument("--d", type=int)
        p.add_argument("--t", type=int)
        p.add_argument("--t-kept", dest="t_kept", type=int)
        p.add_argument("--n-register", dest="n_register", type=int)
        p.add_argument("--L", type=int)
        p.add_argument("--d-ff", dest="d_ff", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--rho", type=float)
        p.add_argument("--b-cal", dest="b_cal", type=int)
        p.add_argument("--b-eval", dest="b_eval", type=int)

    gen = sub.add_parser("generate", help="write SDMS span files from a seeded source")
    add_common(gen, with_jobs=False)
    add_source(gen)
    gen.add_argument("--cut", help="cut start(s), e.g. 4 or 2,4,6 or 1..9")
    gen.add_argument("--p", help="prune length(s)")
    gen.add_argument("--B", type=int, help="images per span")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    fit = sub.add_parser("fit", help="fit one operator on an SDMS file")
    add_common(fit, with_jobs=False)
    fit.add_argument("--in", dest="infile", required=True, help="input .sdms file")
    fit.add_argument("--formulation", choices=["full", "anchored", "replaceme", "identity"])
    fit.add_argument("--solver", choices=["pcr", "rrr"])
    fit.add_argument("--rank", help="integer or 'full'")
    fit.add_argument("--alpha", type=float)
    fit.add_argument("--out", required=True, help="operator file prefix")
    fit.set_defaults(func=cmd_fit)

    sweep = sub.add_parser("sweep", help="run an experiment sweep")
    sweep_sub = sweep.add_subparsers(dest="sweep_command", required=True)

    def add_sweep_common(p):
        add_common(p)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jsonl", action="store_true", help="also emit a JSONL row stream")
        p.add_argument("--cap-rel-l2", dest="cap_rel_l2", type=float, default=None,
                       help="additionally write a plot CSV with rel_l2 capped (raw stays uncapped)")

    hl = sweep_sub.add_parser("headline", help="all formulations over (cut, p) grid")
    add_sweep_common(hl)
    add_source(hl)
    hl.add_argument("--p", help="prune lengths, e.g. 1..10")
    hl.add_argument("--formulations")
    hl.add_argument("--solver", choices=["pcr", "rrr"])
    hl.add_argument("--rank")
    hl.add_argument("--alpha", type=float)
    hl.set_defaults(func=cmd_sweep_headline)

    rk = sweep_sub.add_parser("rank", help="quality vs operator rank, PCR vs RRR")
    add_sweep_common(rk)
    add_source(rk)
    rk.add_argument("--ranks", help="e.g. 4,8,16,full")
    rk.add_argument("--solvers")
    rk.add_argument("--formulations")
    rk.add_argument("--p", type=int)
    rk.add_argument("--alpha", type=float)
    rk.set_defaults(func=cmd_sweep_rank)

    cb = sweep_sub.add_parser("calib", help="error vs calibration budget + power law")
    add_sweep_common(cb)
    add_source(cb)
    cb.add_argument("--budgets", help="ascending image budgets, e.g. 10,50,100")
    cb.add_argument("--reference", type=int, help="reference budget (default: max)")
    cb.add_argument("--formulations")
    cb.add_argument("--p", type=int)
    cb.add_argument("--solver", choices=["pcr", "rrr"])
    cb.add_argument("--alpha", type=float)
    cb.add_argument("--points", help="fixture mode: CSV of B,value to fit directly")
    cb.add_argument("--form", choices=["excess", "ratio"], default="excess")
    cb.set_defaults(func=cmd_sweep_calib)

    ex = sweep_sub.add_parser("extrap", help="one-step fits extrapolated via matrix powers")
    add_sweep_common(ex)
    add_source(ex)
    ex.add_argument("--starts", help="cut starts, e.g. 0..11")
    ex.add_argument("--max-n", dest="max_n", type=int)
    ex.add_argument("--alpha", type=float)
    ex.set_defaults(func=cmd_sweep_extrap)

    ds = sweep_sub.add_parser("downstream", help="local vs final-state quality (toy source)")
    add_sweep_common(ds)
    add_source(ds)
    ds.add_argument("--p", type=int)
    ds.add_argument("--solver", choices=["pcr", "rrr"])
    ds.add_argument("--rank")
    ds.add_argument("--alpha", type=float)
    ds.set_defaults(func=cmd_sweep_downstream)

    tk = sweep_sub.add_parser("tokens", help="cls/patch breakdown of headline operators")
    add_sweep_common(tk)
    add_source(tk)
    tk.add_argument("--p")
    tk.add_argument("--formulations")
    tk.add_argument("--solver", choices=["pcr", "rrr"])
    tk.add_argument("--rank")
    tk.add_argument("--alpha", type=float)
    tk.set_defaults(func=cmd_sweep_tokens)

    pca = sweep_sub.add_parser("pca", help="PCA projection of one token's trajectory")
    add_sweep_common(pca)
    add_source(pca)
    pca.add_argument("--cut", type=int)
    pca.add_argument("--p", type=int)
    pca.add_argument("--token", type=int)
    pca.add_argument("--image", type=int)
    pca.add_argument("--components", type=int)
    pca.add_argument("--formulations")
    pca.add_argument("--solver", choices=["pcr", "rrr"])
    pca.add_argument("--rank")
    pca.add_argument("--alpha", type=float)
    pca.set_defaults(func=cmd_sweep_pca)

    st = sweep_sub.add_parser("stats", help="Friedman/Nemenyi rank table from a sweep CSV")
    st.add_argument("--in", dest="infile", required=True, help="headline sweep CSV")
    st.add_argument("--location", default="local", choices=["local", "downstream"])
    st.add_argument("--alpha-level", dest="alpha_level", type=float, default=0.05)
    st.add_argument("--out", help="optional output directory for ranks.csv/ranks.txt")
    st.set_defaults(func=cmd_sweep_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NoRowsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SpandmdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
