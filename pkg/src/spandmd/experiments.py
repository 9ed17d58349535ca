"""The experiment protocols as reproducible batch procedures.

Every sweep walks a grid of (cut start, prune length, formulation, ...)
cells over a span source, fits on the calibration split, evaluates on the
held-out split, and collects rows keyed by the full configuration tuple.
Output is deterministic: rows are sorted by key before emission and float
columns use shortest round-trip formatting, so rerunning a sweep with the
same seeds reproduces the CSV byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import stats as stats_mod
from .errors import ValidationError
from .linalg import matrix_power, pca_project
from .metrics import MetricRecord, aggregate, evaluate
from .operators import (
    DEFAULT_ALPHA,
    FitConfig,
    FittedOperator,
    fit_operator,
    predict,
)
from .snapshot import SnapshotSpan, stack_pairs, stack_residual_pairs

DEFAULT_BUDGETS = (10, 50, 100, 250, 500, 1000)
DEFAULT_FORMULATIONS = ("full", "anchored", "replaceme", "identity")

CSV_COLUMNS = (
    "cut_start", "prune_length", "step", "formulation", "solver", "rank",
    "alpha", "budget", "token_group", "cos", "rel_l2", "r2", "norm_ratio",
    "n_tokens", "location", "diverged",
)

_SENTINEL_METRICS = MetricRecord(
    cos=float("nan"), rel_l2=float("inf"), r2=float("nan"),
    norm_ratio=float("nan"), n_tokens=0,
)


@dataclass(frozen=True)
class SweepRow:
    cut_start: int
    prune_length: int
    step: int
    formulation: str
    solver: str
    rank: str
    alpha: float
    budget: int
    token_group: str
    metrics: MetricRecord
    location: str = "local"
    diverged: bool = False

    @property
    def key(self):
        rank_ord = float("inf") if self.rank == "full" else int(self.rank)
        return (
            self.cut_start, self.prune_length, self.step, self.formulation,
            self.solver, rank_ord, self.alpha, self.budget, self.token_group,
            self.location,
        )


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class SweepResult:
    """Ordered, uniquely-keyed rows plus run provenance."""

    def __init__(self, rows, provenance=None):
        self.rows = sorted(rows, key=lambda r: r.key)
        self.provenance = dict(provenance or {})
        keys = [r.key for r in self.rows]
        if len(set(keys)) != len(keys):
            seen, dup = set(), None
            for k in keys:
                if k in seen:
                    dup = k
                    break
                seen.add(k)
            raise ValidationError(f"duplicate sweep row key: {dup}")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def extend(self, other: "SweepResult") -> "SweepResult":
        return SweepResult(self.rows + other.rows, {**self.provenance, **other.provenance})

    def _row_cells(self, row, cap_rel_l2=None):
        rel = row.metrics.rel_l2
        if cap_rel_l2 is not None:
            rel = min(rel, cap_rel_l2)
        return [
            row.cut_start, row.prune_length, row.step, row.formulation,
            row.solver, row.rank, row.alpha, row.budget, row.token_group,
            row.metrics.cos, rel, row.metrics.r2, row.metrics.norm_ratio,
            row.metrics.n_tokens, row.location, int(row.diverged),
        ]

    def to_csv(self, destination, cap_rel_l2=None) -> None:
        """Write rows as CSV. ``cap_rel_l2`` is for plot exports only;
        stored results should always be written uncapped."""
        if isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__"):
            with open(destination, "w", newline="") as fh:
                return self.to_csv(fh, cap_rel_l2=cap_rel_l2)
        writer = csv.writer(destination, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(c) for c in self._row_cells(row, cap_rel_l2)])

    def to_csv_string(self, cap_rel_l2=None) -> str:
        buf = io.StringIO()
        self.to_csv(buf, cap_rel_l2=cap_rel_l2)
        return buf.getvalue()

    def to_jsonl(self, destination) -> None:
        if isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__"):
            with open(destination, "w") as fh:
                return self.to_jsonl(fh)
        for row in self.rows:
            cells = dict(zip(CSV_COLUMNS, self._row_cells(row)))
            destination.write(json.dumps(cells, sort_keys=True) + "\n")

    def filter(self, **conditions) -> list:
        out = []
        for row in self.rows:
            if all(getattr(row, k) == v for k, v in conditions.items()):
                out.append(row)
        return out

    def summarize(self, metric: str = "cos", by=("formulation", "prune_length"),
                  where=None, **conditions):
        """Median/IQR of one metric across cut starts, grouped by ``by``.

        ``where`` is an optional row predicate, e.g. endpoint rows only:
        ``lambda r: r.step == r.prune_length``.
        """
        groups = {}
        for row in self.rows:
            if conditions and not all(getattr(row, k) == v for k, v in conditions.items()):
                continue
            if where is not None and not where(row):
                continue
            key = tuple(getattr(row, b) for b in by)
            groups.setdefault(key, []).append(getattr(row.metrics, metric))
        return {key: aggregate(vals) for key, vals in sorted(groups.items())}


def read_sweep_csv(path):
    """Load a sweep CSV back into typed row dicts."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append({
                "cut_start": int(rec["cut_start"]),
                "prune_length": int(rec["prune_length"]),
                "step": int(rec["step"]),
                "formulation": rec["formulation"],
                "solver": rec["solver"],
                "rank": rec["rank"],
                "alpha": float(rec["alpha"]),
                "budget": int(rec["budget"]),
                "token_group": rec["token_group"],
                "cos": float(rec["cos"]),
                "rel_l2": float(rec["rel_l2"]),
                "r2": float(rec["r2"]),
                "norm_ratio": float(rec["norm_ratio"]),
                "n_tokens": int(rec["n_tokens"]),
                "location": rec["location"],
                "diverged": bool(int(rec["diverged"])),
            })
    return rows


def _metric_record(pred, truth) -> tuple:
    if not np.isfinite(pred).all():
        return _SENTINEL_METRICS, True
    return evaluate(pred, truth), False


def _run_tasks(tasks, jobs: int = 1):
    if jobs <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _fit_config(formulation, solver, rank, alpha) -> FitConfig:
    return FitConfig(formulation=formulation, solver=solver, rank=rank, alpha=alpha)


# ---------------------------------------------------------------------------
# one-step extrapolation


def extrapolation_sweep(source, starts=None, max_n: int = 10,
                        alpha: float = DEFAULT_ALPHA, solver: str = "pcr",
                        jobs: int = 1) -> SweepResult:
    """Fit a one-step map at each start and extrapolate its matrix powers.

    For every start i the operator is fit on the single-step pair (p=1) and
    its n-th power is evaluated against the true state n blocks ahead, for
    n = 1..max_n. Stored rel_l2 is uncapped; cap only at plot export.
    """
    if starts is None:
        starts = source.starts(1, include_zero=True)

    def one_start(i):
        horizon = min(max_n, source.L - i)
        if horizon < 1:
            warnings.warn(f"start {i} has no room to extrapolate; skipped")
            return []
        if horizon < max_n:
            warnings.warn(f"start {i}: only {horizon} of {max_n} steps available")
        cal = source.calibration_span(i, 1)
        op = fit_operator(cal, _fit_config("full", solver, None, alpha))
        ev = source.evaluation_span(i, horizon)
        rows = []
        for n in range(1, horizon + 1):
            pred = np.einsum("ef,ftb->etb", matrix_power(op.K, n), ev.states[0])
            record, diverged = _metric_record(pred, ev.states[n])
            rows.append(SweepRow(
                cut_start=i, prune_length=horizon, step=n, formulation="full",
                solver=solver, rank="full", alpha=alpha, budget=cal.dims.B,
                token_group="all", metrics=record, diverged=diverged,
            ))
        return rows

    nested = _run_tasks([lambda i=i: one_start(i) for i in starts], jobs)
    rows = [row for sub in nested for row in sub]
    return SweepResult(rows, provenance={
        "sweep": "extrapolation", "source": source.source_id,
        "max_n": max_n, "alpha": alpha, "solver": solver,
    })


# ---------------------------------------------------------------------------
# headline sweep


def headline_sweep(source, p_values=tuple(range(1, 11)),
                   formulations=DEFAULT_FORMULATIONS, solver: str = "pcr",
                   rank=None, alpha: float = DEFAULT_ALPHA,
                   return_operators: bool = False, jobs: int = 1):
    """Fit every formulation at every (cut start, prune length).

    DMD formulations emit rows at every step q <= p from the same fitted K;
    the identity baseline does too (it is fit-free); the endpoint map
    contributes only its q = p row.
    """
    operators = {}

    def one_cell(i, p):
        cal = source.calibration_span(i, p)
        ev = source.evaluation_span(i, p)
        rows, ops = [], {}
        for formulation in formulations:
            cfg = _fit_config(formulation, solver, rank, alpha)
            op = fit_operator(cal, cfg)
            ops[(i, p, formulation)] = op
            steps = [p] if formulation == "replaceme" else list(range(1, p + 1))
            for q in steps:
                record, diverged = _metric_record(predict(op, ev, q), ev.states[q])
                rows.append(SweepRow(
                    cut_start=i, prune_length=p, step=q, formulation=formulation,
                    solver=op.config.solver, rank=op.config.rank_label,
                    alpha=op.config.alpha, budget=cal.dims.B, token_group="all",
                    metrics=record, diverged=diverged,
                ))
        return rows, ops

    cells = [(i, p) for p in sorted(p_values) for i in source.starts(p)]
    nested = _run_tasks([lambda c=c: one_cell(*c) for c in cells], jobs)
    rows = []
    for sub_rows, sub_ops in nested:
        rows.extend(sub_rows)
        operators.update(sub_ops)
    result = SweepResult(rows, provenance={
        "sweep": "headline", "source": source.source_id,
        "p_values": sorted(p_values), "formulations": list(formulations),
        "solver": solver, "rank": rank, "alpha": alpha,
    })
    if return_operators:
        return result, operators
    return result


# ---------------------------------------------------------------------------
# rank sweep


@dataclass(frozen=True)
class RankSweepResult:
    sweep: SweepResult
    deltas: list = field(default_factory=list)  # RRR minus PCR per cell


def rank_sweep(source, ranks, solvers=("pcr", "rrr"),
               formulations=("full", "anchored"), p: int = 3,
               alpha: float = DEFAULT_ALPHA, jobs: int = 1) -> RankSweepResult:
    """Endpoint quality as a function of operator rank and solver.

    ``ranks`` may contain ints and None (the full-rank column). Emits the
    RRR-minus-PCR delta table over matched (start, rank, formulation) cells.
    """
    ranks = list(ranks)
    for r in ranks:
        if r is not None and r > source.d:
            raise ValidationError(f"rank {r} exceeds source dimension {source.d}")

    def one_cell(i):
        cal = source.calibration_span(i, p)
        ev = source.evaluation_span(i, p)
        rows = []
        for formulation in formulations:
            for r in ranks:
                for solver in solvers:
                    op = fit_operator(cal, _fit_config(formulation, solver, r, alpha))
                    record, diverged = _metric_record(predict(op, ev, p), ev.states[p])
                    rows.append(SweepRow(
                        cut_start=i, prune_length=p, step=p, formulation=formulation,
                        solver=solver, rank="full" if r is None else str(r),
                        alpha=alpha, budget=cal.dims.B, token_group="all",
                        metrics=record, diverged=diverged,
                    ))
        return rows

    nested = _run_tasks([lambda i=i: one_cell(i) for i in source.starts(p)], jobs)
    rows = [row for sub in nested for row in sub]
    result = SweepResult(rows, provenance={
        "sweep": "rank", "source": source.source_id, "p": p,
        "ranks": ["full" if r is None else r for r in ranks],
        "solvers": list(solvers), "formulations": list(formulations), "alpha": alpha,
    })

    deltas = []
    if "pcr" in solvers and "rrr" in solvers:
        by_key = {}
        for row in result.rows:
            by_key[(row.cut_start, row.formulation, row.rank, row.solver)] = row
        for (i, formulation, r, solver), row in sorted(by_key.items()):
            if solver != "pcr":
                continue
            other = by_key.get((i, formulation, r, "rrr"))
            if other is None:
                continue
            deltas.append({
                "cut_start": i, "formulation": formulation, "rank": r,
                "cos_delta": other.metrics.cos - row.metrics.cos,
                "rel_l2_delta": other.metrics.rel_l2 - row.metrics.rel_l2,
            })
    return RankSweepResult(sweep=result, deltas=deltas)


# ---------------------------------------------------------------------------
# calibration-budget sweep


@dataclass(frozen=True)
class CalibrationSweepResult:
    sweep: SweepResult
    diagnostics: list
    fits: dict  # (cut_start, formulation) -> PowerLawFit or None


def calibration_sweep(source, budgets=DEFAULT_BUDGETS, reference_B=None,
                      formulations=("full", "anchored"), p: int = 3,
                      solver: str = "pcr", alpha: float = DEFAULT_ALPHA,
                      starts=None, jobs: int = 1) -> CalibrationSweepResult:
    """Error versus calibration budget, with power-law convergence fits.

    Budgets above the available calibration pool are dropped with a warning.
    For each configuration the sweep records the endpoint metrics per budget
    plus diagnostics: rel_l2 normalized by its reference-budget value, the
    train-eval MSE gap (normalized by the reference eval MSE), and the
    cross-covariance concentration |T_B - T_ref|_F (mean-normalized
    covariances, so the distance is budget-independent in scale).
    """
    budgets = [int(b) for b in budgets]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValidationError("budgets must be strictly ascending")
    pool = getattr(source, "B_cal", None)
    if pool is not None and budgets[-1] > pool:
        kept = [b for b in budgets if b <= pool]
        warnings.warn(
            f"budgets {sorted(set(budgets) - set(kept))} exceed the calibration "
            f"pool ({pool} images); capped"
        )
        budgets = kept
    if len(budgets) < 2:
        raise ValidationError("need at least two usable budgets")
    if reference_B is None:
        reference_B = budgets[-1]
    if reference_B != budgets[-1]:
        raise ValidationError("reference_B must be the largest budget")
    if starts is None:
        starts = source.starts(p)

    def eval_mse(op, ev_span):
        pair = (stack_residual_pairs(ev_span) if op.config.formulation == "anchored"
                else stack_pairs(ev_span))
        resid = pair.Zp - op.K @ pair.Z
        return float(np.sum(resid * resid) / pair.M)

    def cross_cov(span, formulation):
        pair = (stack_residual_pairs(span) if formulation == "anchored"
                else stack_pairs(span))
        return (pair.Zp @ pair.Z.T) / pair.M

    def one_cell(i):
        ev = source.evaluation_span(i, p)
        rows, diag = [], []
        for formulation in formulations:
            per_budget = {}
            for B in budgets:
                cal = source.calibration_span(i, p, budget=B)
                op = fit_operator(cal, _fit_config(formulation, solver, None, alpha))
                record, diverged = _metric_record(predict(op, ev, p), ev.states[p])
                per_budget[B] = {
                    "record": record,
                    "train_mse": op.train_mse,
                    "eval_mse": eval_mse(op, ev),
                    "tcov": cross_cov(cal, formulation),
                }
                rows.append(SweepRow(
                    cut_start=i, prune_length=p, step=p, formulation=formulation,
                    solver=solver, rank="full", alpha=alpha, budget=B,
                    token_group="all", metrics=record, diverged=diverged,
                ))
            ref = per_budget[reference_B]
            for B in budgets:
                cell = per_budget[B]
                diag.append({
                    "cut_start": i, "formulation": formulation, "budget": B,
                    "rel_l2": cell["record"].rel_l2,
                    "norm_rel_l2": cell["record"].rel_l2 / ref["record"].rel_l2,
                    "mse_gap": (cell["eval_mse"] - cell["train_mse"]) / ref["eval_mse"],
                    "tcov_dist": float(np.linalg.norm(cell["tcov"] - ref["tcov"])),
                })
        return rows, diag

    nested = _run_tasks([lambda i=i: one_cell(i) for i in starts], jobs)
    rows, diagnostics = [], []
    for sub_rows, sub_diag in nested:
        rows.extend(sub_rows)
        diagnostics.extend(sub_diag)

    fits = {}
    for i in starts:
        for formulation in formulations:
            points = [
                (rec["budget"], rec["norm_rel_l2"] - 1.0)
                for rec in diagnostics
                if rec["cut_start"] == i and rec["formulation"] == formulation
                and rec["budget"] < reference_B and rec["norm_rel_l2"] > 1.0
            ]
            if len(points) < 3:
                warnings.warn(
                    f"cut {i} {formulation}: only {len(points)} usable excess "
                    "points; power-law fit skipped"
                )
                fits[(i, formulation)] = None
            else:
                fits[(i, formulation)] = stats_mod.fit_power_law(points, form="excess")

    result = SweepResult(rows, provenance={
        "sweep": "calibration", "source": source.source_id, "p": p,
        "budgets": budgets, "reference_B": reference_B,
        "formulations": list(formulations), "solver": solver, "alpha": alpha,
    })
    return CalibrationSweepResult(sweep=result, diagnostics=diagnostics, fits=fits)


# ---------------------------------------------------------------------------
# downstream propagation


def downstream_eval(source, p: int = 3, formulations=DEFAULT_FORMULATIONS,
                    solver: str = "pcr", rank=None, alpha: float = DEFAULT_ALPHA,
                    jobs: int = 1) -> SweepResult:
    """Paired local/downstream rows for every formulation at one prune length.

    Requires a toy source (the tail blocks must be runnable). Each fitted
    operator's endpoint prediction is substituted at block i+p, the
    remaining blocks are run with ground-truth register tokens re-inserted,
    and the final hidden state is scored against the uninterrupted run.
    Rows whose substituted forward pass went non-finite carry the diverged
    flag with sentinel metrics, uncapped.
    """
    from .toymodel import run_remaining_blocks

    model = getattr(source, "model", None)
    if model is None:
        raise ValidationError("downstream evaluation needs a toy source with tail blocks")
    truth_final = source.evaluation_kept_state(source.L)

    def one_cell(i):
        cal = source.calibration_span(i, p)
        ev = source.evaluation_span(i, p)
        reference = source.evaluation_full_state(i + p)
        rows = []
        for formulation in formulations:
            op = fit_operator(cal, _fit_config(formulation, solver, rank, alpha))
            pred = predict(op, ev, p)
            local_record, local_div = _metric_record(pred, ev.states[p])
            common = dict(
                cut_start=i, prune_length=p, step=p, formulation=formulation,
                solver=op.config.solver, rank=op.config.rank_label,
                alpha=op.config.alpha, budget=cal.dims.B, token_group="all",
            )
            rows.append(SweepRow(metrics=local_record, location="local",
                                 diverged=local_div, **common))
            if local_div:
                rows.append(SweepRow(metrics=_SENTINEL_METRICS, location="downstream",
                                     diverged=True, **common))
                continue
            final = run_remaining_blocks(model, pred, i, p, reference)
            down_record, down_div = _metric_record(final, truth_final)
            rows.append(SweepRow(metrics=down_record, location="downstream",
                                 diverged=down_div, **common))
        return rows

    nested = _run_tasks([lambda i=i: one_cell(i) for i in source.starts(p)], jobs)
    rows = [row for sub in nested for row in sub]
    return SweepResult(rows, provenance={
        "sweep": "downstream", "source": source.source_id, "p": p,
        "formulations": list(formulations), "solver": solver, "rank": rank,
        "alpha": alpha, "register_policy": "ground-truth registers re-inserted at the cut",
    })


def location_orderings(result: SweepResult, metric: str = "cos"):
    """Method orderings implied by local vs downstream medians, with the
    Spearman rank correlation between the two ranking vectors."""
    orders = {}
    for location in ("local", "downstream"):
        med = result.summarize(metric=metric, by=("formulation",), location=location)
        items = sorted(med.items(), key=lambda kv: -kv[1].median)
        orders[location] = [name for (name,), _ in items]
    methods = sorted(orders["local"])
    r_local = np.array([orders["local"].index(m) for m in methods], dtype=float)
    r_down = np.array([orders["downstream"].index(m) for m in methods], dtype=float)
    lc = r_local - r_local.mean()
    dc = r_down - r_down.mean()
    denom = float(np.linalg.norm(lc) * np.linalg.norm(dc))
    spearman = float(lc @ dc / denom) if denom > 0 else 1.0
    return orders["local"], orders["downstream"], spearman


# ---------------------------------------------------------------------------
# token-type breakdown


def default_token_groups(span: SnapshotSpan):
    cls = span.dims.cls_index
    return {
        "cls": [cls],
        "patch": [tau for tau in range(span.dims.t_kept) if tau != cls],
    }


def token_breakdown(source, operators, token_groups=None, jobs: int = 1) -> SweepResult:
    """Re-score stored headline operators under a token partition.

    No refitting: ``operators`` is the mapping returned by
    ``headline_sweep(..., return_operators=True)``. Emits one endpoint row
    per (cell, group).
    """
    cells = sorted(operators.keys())

    def one_cell(cell):
        i, p, formulation = cell
        op = operators[cell]
        ev = source.evaluation_span(i, p)
        groups = token_groups if token_groups is not None else default_token_groups(ev)
        pred = predict(op, ev, p)
        records = evaluate(pred, ev.states[p], token_groups=groups)
        rows = []
        for name in sorted(records):
            rows.append(SweepRow(
                cut_start=i, prune_length=p, step=p, formulation=formulation,
                solver=op.config.solver, rank=op.config.rank_label,
                alpha=op.config.alpha, budget=op.span_meta.B if op.span_meta else 0,
                token_group=name, metrics=records[name],
            ))
        return rows

    nested = _run_tasks([lambda c=c: one_cell(c) for c in cells], jobs)
    rows = [row for sub in nested for row in sub]
    return SweepResult(rows, provenance={
        "sweep": "tokens", "source": source.source_id,
        "groups": sorted(token_groups) if token_groups else ["cls", "patch"],
    })


# ---------------------------------------------------------------------------
# PCA trajectory export


@dataclass(frozen=True)
class PcaTrajectoryTable:
    coords: list      # rows: method, step, pc1, pc2, ...
    step_metrics: list  # rows: method, step, cos, rel_l2
    basis: np.ndarray
    center: np.ndarray


def rollout_states(op: FittedOperator, span: SnapshotSpan):
    """All predicted states of one operator over a span, keyed by step.

    Step 0 is the unmodified starting state. The endpoint map contributes
    only steps {0, p}; other formulations every step.
    """
    p = span.dims.p
    states = {0: span.states[0]}
    steps = [p] if op.config.formulation == "replaceme" else range(1, p + 1)
    for q in steps:
        states[q] = predict(op, span, q)
    return states


def pca_trajectory_export(span: SnapshotSpan, predictions, token: int,
                          image: int = 0, k: int = 2) -> PcaTrajectoryTable:
    """Project one token's trajectory and its predictions into PCA space.

    The basis is fit on the ground-truth trajectory of the selected
    (token, image); ground truth and every method's rollout are projected
    into that same basis. ``predictions`` maps method name -> {step: state}
    as produced by :func:`rollout_states`. The side table scores each
    predicted vector against the true one at its step.
    """
    dims = span.dims
    if not 0 <= token < dims.t_kept:
        raise ValidationError(f"token {token} out of range for {dims.t_kept} kept tokens")
    if not 0 <= image < dims.B:
        raise ValidationError(f"image {image} out of range for {dims.B} images")

    truth = np.stack([s[:, token, image] for s in span.states], axis=1)  # d x (p+1)
    coords_truth, basis = pca_project(truth, k)
    center = truth.mean(axis=1)

    coords, step_metrics = [], []
    for q in range(dims.p + 1):
        coords.append({"method": "ground_truth", "step": q,
                       **{f"pc{j + 1}": float(coords_truth[j, q])
                          for j in range(coords_truth.shape[0])}})

    for method in sorted(predictions):
        for q in sorted(predictions[method]):
            vec = predictions[method][q][:, token, image]
            proj = basis.T @ (vec - center)
            coords.append({"method": method, "step": q,
                           **{f"pc{j + 1}": float(proj[j]) for j in range(proj.shape[0])}})
            true_vec = truth[:, q]
            cos = float(vec @ true_vec / (np.linalg.norm(vec) * np.linalg.norm(true_vec)))
            rel = float(np.linalg.norm(vec - true_vec) / np.linalg.norm(true_vec))
            step_metrics.append({"method": method, "step": q, "cos": cos, "rel_l2": rel})

    return PcaTrajectoryTable(coords=coords, step_metrics=step_metrics,
                              basis=basis, center=center)
