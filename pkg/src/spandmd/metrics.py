"""Token-wise evaluation metrics and their aggregation conventions.

All four metrics average a per-token quantity over every (image, token)
pair: cosine similarity, relative l2 error, the squared centered cosine
(an R^2-style score), and the norm ratio. Degenerate tokens (zero norm, or
constant vectors for the centered score) raise instead of emitting NaN,
because silent NaNs corrupt downstream medians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTokenError, ValidationError


@dataclass(frozen=True)
class MetricRecord:
    """The four metric means over one token group."""

    cos: float
    rel_l2: float
    r2: float
    norm_ratio: float
    n_tokens: int


@dataclass(frozen=True)
class AggregateStat:
    """Median and interquartile band of a scalar sample."""

    median: float
    q25: float
    q75: float
    n: int


def _flatten_tokens(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.ndim == 2:
        pred = pred[:, :, None]
        truth = truth[:, :, None]
    if pred.ndim != 3:
        raise ValidationError("expected arrays of shape (d, t, B)")
    d = pred.shape[0]
    # (d, t, B) -> (d, t*B) token columns
    return pred.reshape(d, -1), truth.reshape(d, -1)


def _check_nonzero(norms, what: str):
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DegenerateTokenError(
            f"{what} token(s) at flat indices {bad[:10].tolist()}"
            + ("..." if bad.size > 10 else ""),
            indices=bad.tolist(),
        )


def token_cosine(pred, truth) -> np.ndarray:
    """Per-token cosine similarities, flattened over (token, image)."""
    P, T = _flatten_tokens(pred, truth)
    np_, nt = np.linalg.norm(P, axis=0), np.linalg.norm(T, axis=0)
    _check_nonzero(nt, "zero-norm truth")
    _check_nonzero(np_, "zero-norm prediction")
    return np.einsum("ij,ij->j", P, T) / (np_ * nt)


def token_rel_l2(pred, truth) -> np.ndarray:
    P, T = _flatten_tokens(pred, truth)
    nt = np.linalg.norm(T, axis=0)
    _check_nonzero(nt, "zero-norm truth")
    return np.linalg.norm(P - T, axis=0) / nt


def token_r2(pred, truth) -> np.ndarray:
    """Squared cosine of the mean-centered token vectors."""
    P, T = _flatten_tokens(pred, truth)
    Pc = P - P.mean(axis=0, keepdims=True)
    Tc = T - T.mean(axis=0, keepdims=True)
    np_, nt = np.linalg.norm(Pc, axis=0), np.linalg.norm(Tc, axis=0)
    _check_nonzero(nt, "constant truth")
    _check_nonzero(np_, "constant prediction")
    return np.einsum("ij,ij->j", Pc, Tc) ** 2 / (np_**2 * nt**2)


def token_norm_ratio(pred, truth) -> np.ndarray:
    P, T = _flatten_tokens(pred, truth)
    nt = np.linalg.norm(T, axis=0)
    _check_nonzero(nt, "zero-norm truth")
    return np.linalg.norm(P, axis=0) / nt


def cosine_similarity(pred, truth) -> float:
    """Mean token-wise cosine similarity."""
    return float(token_cosine(pred, truth).mean())


def relative_l2(pred, truth) -> float:
    """Mean token-wise relative reconstruction error."""
    return float(token_rel_l2(pred, truth).mean())


def r2_brh(pred, truth) -> float:
    """Mean token-wise squared centered cosine (invariant to constant shifts)."""
    return float(token_r2(pred, truth).mean())


def norm_ratio(pred, truth) -> float:
    """Mean token-wise norm ratio (1.0 means magnitudes are preserved)."""
    return float(token_norm_ratio(pred, truth).mean())


def _record_from_values(cos, rel, r2, nr) -> MetricRecord:
    return MetricRecord(
        cos=float(cos.mean()),
        rel_l2=float(rel.mean()),
        r2=float(r2.mean()),
        norm_ratio=float(nr.mean()),
        n_tokens=int(cos.shape[0]),
    )


def evaluate(pred, truth, token_groups=None):
    """All four metrics, optionally broken down over a token partition.

    ``token_groups`` maps group names to token indices of the ``t`` axis.
    Groups must be disjoint and cover every token. Without a partition a
    single :class:`MetricRecord` over all tokens is returned; the full-token
    partition reproduces it bitwise.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim != 3 or truth.shape != pred.shape:
        raise ValidationError("evaluate expects matching (d, t, B) arrays")
    t, B = pred.shape[1], pred.shape[2]

    cos = token_cosine(pred, truth).reshape(t, B)
    rel = token_rel_l2(pred, truth).reshape(t, B)
    r2 = token_r2(pred, truth).reshape(t, B)
    nr = token_norm_ratio(pred, truth).reshape(t, B)

    if token_groups is None:
        return _record_from_values(cos.ravel(), rel.ravel(), r2.ravel(), nr.ravel())

    seen = np.zeros(t, dtype=bool)
    for name, idx in token_groups.items():
        idx = np.asarray(list(idx), dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= t):
            raise ValidationError(f"group '{name}' has out-of-range token indices")
        if seen[idx].any():
            raise ValidationError(f"group '{name}' overlaps another group")
        seen[idx] = True
    if not seen.all():
        missing = np.flatnonzero(~seen).tolist()
        raise ValidationError(f"partition does not cover tokens {missing}")

    out = {}
    for name, idx in token_groups.items():
        idx = np.asarray(list(idx), dtype=int)
        out[name] = _record_from_values(
            cos[idx].ravel(), rel[idx].ravel(), r2[idx].ravel(), nr[idx].ravel()
        )
    return out


def aggregate(values) -> AggregateStat:
    """Median and quartiles (linear interpolation between order statistics)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot aggregate an empty sequence")
    q25, med, q75 = np.percentile(arr, [25.0, 50.0, 75.0])
    return AggregateStat(median=float(med), q25=float(q25), q75=float(q75), n=int(arr.size))


def cap_values(values, cap: float = 1.0) -> np.ndarray:
    """Cap a metric column for plot export. Never applied to stored records."""
    return np.minimum(np.asarray(values, dtype=np.float64), cap)
