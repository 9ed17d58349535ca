"""Fitting and applying the four block-replacement methods.

The four formulations share one interface:

* ``full``      -- fit K on consecutive raw-state pairs, predict K^q X_i.
* ``anchored``  -- hold the post-attention residual A_i fixed, fit K on the
                   residual trajectory, predict A_i + K^q M_i.
* ``replaceme`` -- unconstrained endpoint map T fit only between the span
                   boundaries, acting on the MLP branch: A_i + T M_i.
* ``identity``  -- no fit; the prediction is X_i itself.

Rank constraints come in two flavors: principal component regression (PCR)
truncates the input covariance, reduced rank regression (RRR) truncates the
whitened cross-covariance. The two coincide at full rank.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormulationError, ValidationError
from .linalg import (
    REL_TOL,
    covariances,
    inv_sqrt_psd,
    matrix_power,
    ridge_solve,
    truncated_svd,
)
from .snapshot import (
    DataMatrixPair,
    SnapshotSpan,
    SpanDims,
    endpoint_pair,
    stack_pairs,
    stack_residual_pairs,
)

FORMULATIONS = ("full", "anchored", "replaceme", "identity")
SOLVERS = ("pcr", "rrr")

DEFAULT_ALPHA = 1e-5


@dataclass(frozen=True)
class FitConfig:
    """Formulation, solver, rank constraint and ridge penalty of one fit.

    ``rank=None`` means full rank. The identity formulation ignores solver,
    rank and alpha.
    """

    formulation: str = "full"
    solver: str = "pcr"
    rank: int | None = None
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValidationError(f"unknown formulation {self.formulation!r}")
        if self.solver not in SOLVERS:
            raise ValidationError(f"unknown solver {self.solver!r}")
        if self.rank is not None and self.rank < 1:
            raise ValidationError(f"rank must be >= 1 or None, got {self.rank}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")

    @property
    def rank_label(self) -> str:
        return "full" if self.rank is None else str(self.rank)


@dataclass(frozen=True)
class FittedOperator:
    """A d x d linear map with its provenance and training diagnostics."""

    K: np.ndarray
    config: FitConfig
    span_meta: SpanDims | None
    effective_rank: int
    train_mse: float
    basis: np.ndarray | None = None      # U_r of the input SVD (pcr only)
    reduced: np.ndarray | None = None    # K~ = U_r^T K U_r (pcr only)

    @property
    def d(self) -> int:
        return self.K.shape[0]

    @property
    def ridge_equivalent(self) -> bool:
        """True when an RRR fit carries no active rank constraint."""
        return self.config.solver == "rrr" and (
            self.config.rank is None or self.config.rank >= self.d
        )


@dataclass(frozen=True)
class ModeSet:
    """Eigenpairs of the reduced operator, sorted by |lambda| descending.

    ``modes`` holds the lifted eigenvectors U_r w; it is None when the
    reduced operator was too close to defective to trust its eigenvectors
    (``eigenvalues_only`` is then set).
    """

    eigenvalues: np.ndarray
    modes: np.ndarray | None
    reduced: np.ndarray
    eigenvalues_only: bool = False


def _train_mse(K, pair: DataMatrixPair) -> float:
    resid = pair.Zp - K @ pair.Z
    return float(np.sum(resid * resid) / pair.M)


def _clip_rank(rank: int, d: int) -> int:
    if rank > d:
        warnings.warn(f"requested rank {rank} exceeds d={d}; clipping")
        return d
    return rank


def fit_pcr(
    pair: DataMatrixPair,
    rank: int,
    alpha: float = 0.0,
    formulation: str = "full",
    span_meta: SpanDims | None = None,
) -> FittedOperator:
    """Principal component regression: regress in the coordinates of the
    top-``rank`` left singular vectors of Z.

    ``K = U_r (U_r^T Zp V_r S_r^{-1}) U_r^T``; with ``alpha > 0`` the factor
    ``S_r^{-1}`` becomes the regularized ``S_r / (S_r^2 + alpha)``.
    """
    if rank < 1:
        raise ValidationError(f"rank must be >= 1, got {rank}")
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    rank = _clip_rank(rank, pair.d)
    f = truncated_svd(pair.Z, rank)
    if alpha == 0:
        inv = np.where(f.S > 0, 1.0 / np.maximum(f.S, 1e-300), 0.0)
    else:
        inv = f.S / (f.S**2 + alpha)
    reduced = f.U.T @ pair.Zp @ (f.V * inv)
    K = f.U @ reduced @ f.U.T
    cfg = FitConfig(formulation=formulation, solver="pcr",
                    rank=None if rank >= pair.d else rank, alpha=alpha)
    return FittedOperator(
        K=K, config=cfg, span_meta=span_meta,
        effective_rank=f.effective_rank, train_mse=_train_mse(K, pair),
        basis=f.U, reduced=reduced,
    )


def fit_rrr(
    pair: DataMatrixPair,
    rank: int,
    alpha: float,
    formulation: str = "full",
    span_meta: SpanDims | None = None,
) -> FittedOperator:
    """Reduced rank regression: truncate the whitened cross-covariance.

    ``K = [[T C_a^{-1/2}]]_r C_a^{-1/2}`` with ``C_a = Z Z^T + alpha I``.
    Minimizes the rank-constrained ridge objective; requires ``alpha > 0``
    because the whitening is undefined on a rank-deficient covariance.
    """
    if rank < 1:
        raise ValidationError(f"rank must be >= 1, got {rank}")
    if alpha <= 0:
        raise ValidationError("reduced rank regression requires alpha > 0")
    rank = _clip_rank(rank, pair.d)
    cov = covariances(pair)
    ci = inv_sqrt_psd(cov.C, alpha)
    W = cov.T @ ci
    U, S, Vt = np.linalg.svd(W, full_matrices=False)
    keep = min(rank, int(np.sum(S > REL_TOL * S[0]))) if S[0] > 0 else 1
    keep = max(keep, 1)
    W_r = (U[:, :keep] * S[:keep]) @ Vt[:keep]
    K = W_r @ ci
    cfg = FitConfig(formulation=formulation, solver="rrr",
                    rank=None if rank >= pair.d else rank, alpha=alpha)
    return FittedOperator(
        K=K, config=cfg, span_meta=span_meta,
        effective_rank=keep, train_mse=_train_mse(K, pair),
    )


def fit_replaceme(span: SnapshotSpan, alpha: float = DEFAULT_ALPHA) -> FittedOperator:
    """Unconstrained endpoint map on the MLP branch.

    Solves ``min_T |X_{i+p} - (A_i + T M_i)|_F^2 + alpha |T|_F^2`` in closed
    form using endpoint columns only (B * t_kept samples).
    """
    if span.anchor is None or span.mlp_tap is None:
        raise FormulationError("replaceme requires the A_i and M_i taps")
    pair = endpoint_pair(span)
    T = ridge_solve(pair, alpha)
    cfg = FitConfig(formulation="replaceme", solver="pcr", rank=None, alpha=alpha)
    return FittedOperator(
        K=T, config=cfg, span_meta=span.dims,
        effective_rank=pair.d, train_mse=_train_mse(T, pair),
    )


def _fit_learned(pair, config: FitConfig, formulation: str, span_meta) -> FittedOperator:
    rank = config.rank if config.rank is not None else pair.d
    if config.solver == "pcr":
        return fit_pcr(pair, rank, config.alpha, formulation=formulation, span_meta=span_meta)
    return fit_rrr(pair, rank, config.alpha, formulation=formulation, span_meta=span_meta)


def fit_operator(span: SnapshotSpan, config: FitConfig) -> FittedOperator:
    """Fit one operator on a span according to ``config``."""
    if config.formulation == "identity":
        pair = stack_pairs(span)
        K = np.eye(span.dims.d)
        return FittedOperator(
            K=K, config=config, span_meta=span.dims,
            effective_rank=span.dims.d, train_mse=_train_mse(K, pair),
        )
    if config.formulation == "replaceme":
        return fit_replaceme(span, config.alpha)
    if config.formulation == "full":
        return _fit_learned(stack_pairs(span), config, "full", span.dims)
    # anchored
    if span.anchor is None or span.mlp_tap is None:
        raise FormulationError("anchored fitting requires the A_i and M_i taps")
    return _fit_learned(stack_residual_pairs(span), config, "anchored", span.dims)


def _apply(K, state):
    return np.einsum("ef,ftb->etb", K, state)


def predict(op: FittedOperator, span: SnapshotSpan, q: int) -> np.ndarray:
    """Predicted hidden state at step ``q`` of the span (1 <= q <= p).

    full: K^q X_i; anchored: A_i + K^q M_i; replaceme: defined only at
    q = p as A_i + T M_i; identity: X_i unchanged.
    """
    p = span.dims.p
    if not 1 <= q <= p:
        raise ValidationError(f"step q={q} outside 1..{p}")
    if op.d != span.dims.d:
        raise ValidationError(f"operator d={op.d} does not match span d={span.dims.d}")
    form = op.config.formulation
    if form == "identity":
        return span.states[0]
    if form == "full":
        return _apply(matrix_power(op.K, q), span.states[0])
    if span.anchor is None or span.mlp_tap is None:
        raise FormulationError(f"{form} prediction requires the A_i and M_i taps")
    if form == "anchored":
        return span.anchor + _apply(matrix_power(op.K, q), span.mlp_tap)
    # replaceme
    if q != p:
        raise FormulationError(f"replaceme predicts only the endpoint q={p}, not q={q}")
    return span.anchor + _apply(op.K, span.mlp_tap)


def endpoint_mse(op: FittedOperator, span: SnapshotSpan) -> float:
    """Mean squared endpoint error per token column, on this span's data."""
    pred = predict(op, span, span.dims.p)
    resid = pred - span.states[-1]
    n_cols = span.dims.t_kept * span.dims.B
    return float(np.sum(resid * resid) / n_cols)


_EIG_RESIDUAL_TOL = 1e-6


def extract_modes(op: FittedOperator, rank: int | None = None) -> ModeSet:
    """Eigenpairs of the reduced operator, modes lifted by the input basis.

    PCR fits carry their reduced operator; other operators fall back to the
    eigendecomposition of K itself, keeping the top-``rank`` eigenvalues by
    modulus. Near-defective reduced operators degrade to eigenvalue-only.
    """
    if op.reduced is not None and op.basis is not None:
        reduced, basis = op.reduced, op.basis
    else:
        reduced, basis = op.K, np.eye(op.d)
    evals, vecs = np.linalg.eig(reduced)
    order = np.argsort(-np.abs(evals), kind="stable")
    if rank is not None:
        order = order[:rank]
    evals, vecs = evals[order], vecs[:, order]
    residual = np.abs(reduced @ vecs - vecs * evals).max(axis=0)
    # backward-stable solvers keep residuals tiny even on defective input,
    # so also require the eigenvector matrix to be well-conditioned
    svals = np.linalg.svd(vecs, compute_uv=False)
    near_defective = svals[-1] <= _EIG_RESIDUAL_TOL * svals[0]
    if near_defective or np.any(residual > _EIG_RESIDUAL_TOL * (np.abs(evals) + 1.0)):
        return ModeSet(eigenvalues=evals, modes=None, reduced=reduced, eigenvalues_only=True)
    return ModeSet(eigenvalues=evals, modes=basis @ vecs, reduced=reduced)


def fuse_into_mlp(T: np.ndarray, W_out: np.ndarray, b_out: np.ndarray):
    """Fuse an endpoint map into the MLP output projection: (T W_out, T b_out).

    Applying the fused projection equals applying T after the original MLP,
    exactly.
    """
    T = np.asarray(T, dtype=np.float64)
    W_out = np.asarray(W_out, dtype=np.float64)
    b_out = np.asarray(b_out, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValidationError(f"T must be square, got {T.shape}")
    if W_out.shape[0] != T.shape[1] or b_out.shape != (T.shape[1],):
        raise ValidationError(
            f"shape mismatch: T {T.shape}, W_out {W_out.shape}, b_out {b_out.shape}"
        )
    return T @ W_out, T @ b_out


def select_cut(distances) -> int:
    """Cut index minimizing the span distance; ties break to the smaller index.

    ``distances`` is a mapping {cut index: distance} or a sequence of
    (cut index, distance) pairs.
    """
    if hasattr(distances, "items"):
        items = list(distances.items())
    else:
        items = list(distances)
    if not items:
        raise ValidationError("no cut candidates supplied")
    items.sort(key=lambda kv: kv[0])
    best_idx, best = items[0]
    for idx, val in items[1:]:
        if val < best:
            best_idx, best = idx, val
    return best_idx


def cut_distances(states, p: int, measure: str = "rel_l2"):
    """Distance h(X_l, X_{l+p}) for every valid cut start l.

    ``states`` is the full kept-token trajectory [X_0 .. X_L]. Measures:
    ``rel_l2`` (mean relative l2 error) or ``cosine`` (1 - mean cosine).
    """
    from . import metrics as _metrics

    if measure == "rel_l2":
        h = _metrics.relative_l2
    elif measure == "cosine":
        def h(a, b):
            return 1.0 - _metrics.cosine_similarity(a, b)
    else:
        raise ValidationError(f"unknown distance measure {measure!r}")
    L = len(states) - 1
    if p > L:
        raise ValidationError(f"prune length {p} exceeds depth {L}")
    return {ell: h(states[ell + p], states[ell]) for ell in range(L - p + 1)}


def save_operator(op: FittedOperator, base_path) -> None:
    """Write ``<base>.json`` (header) and ``<base>.bin`` (row-major f64 K)."""
    base = Path(base_path)
    header = {
        "config": {
            "formulation": op.config.formulation,
            "solver": op.config.solver,
            "rank": op.config.rank,
            "alpha": op.config.alpha,
        },
        "span_meta": None if op.span_meta is None else {
            "d": op.span_meta.d, "t": op.span_meta.t, "B": op.span_meta.B,
            "p": op.span_meta.p, "i": op.span_meta.i, "L": op.span_meta.L,
            "n_register": op.span_meta.n_register, "cls_index": op.span_meta.cls_index,
        },
        "effective_rank": op.effective_rank,
        "train_mse": op.train_mse,
        "d": op.d,
        "payload": base.with_suffix(".bin").name,
    }
    base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    base.with_suffix(".bin").write_bytes(np.ascontiguousarray(op.K, dtype="<f8").tobytes())


def load_operator(base_path) -> FittedOperator:
    base = Path(base_path)
    header = json.loads(base.with_suffix(".json").read_text())
    d = header["d"]
    raw = base.with_suffix(".bin").read_bytes()
    K = np.frombuffer(raw, dtype="<f8").reshape(d, d).astype(np.float64)
    meta = header["span_meta"]
    span_meta = None if meta is None else SpanDims(**meta)
    cfg = FitConfig(**header["config"])
    return FittedOperator(
        K=K, config=cfg, span_meta=span_meta,
        effective_rank=header["effective_rank"], train_mse=header["train_mse"],
    )
