"""Seeded desk-scale generators for hidden-state trajectories.

Two sources live here. ``ToyModel`` is a deterministic pre-norm transformer
with LayerScale on both residual branches; its blocks compute

    A = X + D1 * MHA(LN1(X))
    M = MLP(LN2(A))
    X' = A + D2 * M

and ``forward_with_taps`` records the span states with LayerScale folded
into the branch outputs, so the recorded arrays satisfy X_i - A_i = M_i
exactly. ``LinearSystem`` produces trajectories of an exact linear map,
the ground-truth oracle for recovery tests.

Register tokens ride along in every forward pass (they attend and are
attended) but are stripped from all recorded arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GenerationError, ValidationError
from .snapshot import SnapshotSpan, SpanDims

_LN_EPS = 1e-6


def _gelu(x):
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _semi_orthogonal(rows: int, cols: int, rng) -> np.ndarray:
    """Random matrix with orthonormal rows or columns, scaled by 1/sqrt(d)."""
    big, small = max(rows, cols), min(rows, cols)
    raw = rng.standard_normal((big, small))
    q, _ = np.linalg.qr(raw)
    mat = q if rows >= cols else q.T
    return mat / math.sqrt(cols)


@dataclass(frozen=True)
class ToyBlockParams:
    """Weights of one pre-norm block. All arrays are float64."""

    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray
    W_in: np.ndarray
    b_in: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.Wq.shape[0]
        if d % self.heads != 0:
            raise ValidationError(f"d={d} not divisible by heads={self.heads}")
        if self.W_in.shape[0] < d:
            raise ValidationError("d_ff must be >= d")
        if not (np.isfinite(self.D1).all() and np.isfinite(self.D2).all()):
            raise ValidationError("LayerScale diagonals must be finite")


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    return gain[:, None, None] * (x - mu) / np.sqrt(var + _LN_EPS) + bias[:, None, None]


def _attention(params: ToyBlockParams, x):
    # x: (d, t, B); softmax attention over the token axis, per image
    d, t, B = x.shape
    h = params.heads
    dh = d // h
    q = np.einsum("ef,ftb->etb", params.Wq, x).reshape(h, dh, t, B)
    k = np.einsum("ef,ftb->etb", params.Wk, x).reshape(h, dh, t, B)
    v = np.einsum("ef,ftb->etb", params.Wv, x).reshape(h, dh, t, B)
    scores = np.einsum("hdqb,hdkb->hqkb", q, k) / math.sqrt(dh)
    scores -= scores.max(axis=2, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=2, keepdims=True)
    out = np.einsum("hqkb,hdkb->hdqb", w, v).reshape(d, t, B)
    return np.einsum("ef,ftb->etb", params.Wo, out)


def _mlp(params: ToyBlockParams, x):
    hidden = _gelu(np.einsum("hf,ftb->htb", params.W_in, x) + params.b_in[:, None, None])
    return np.einsum("fh,htb->ftb", params.W_out, hidden) + params.b_out[:, None, None]


def block_forward(params: ToyBlockParams, x, return_taps: bool = False):
    """One block step; optionally returns (X', A, D2-scaled MLP output)."""
    attn = _attention(params, _layer_norm(x, params.ln1_gain, params.ln1_bias))
    a = x + params.D1[:, None, None] * attn
    m_scaled = params.D2[:, None, None] * _mlp(params, _layer_norm(a, params.ln2_gain, params.ln2_bias))
    x_next = a + m_scaled
    if return_taps:
        return x_next, a, m_scaled
    return x_next


def fold_layerscale(params: ToyBlockParams) -> ToyBlockParams:
    """Absorb the LayerScale diagonals into the preceding projections.

    Exact reparameterization: the attention output projection rows are
    scaled by D1, the MLP output projection rows and bias by D2, and both
    diagonals are reset to ones.
    """
    return replace(
        params,
        Wo=params.D1[:, None] * params.Wo,
        W_out=params.D2[:, None] * params.W_out,
        b_out=params.D2 * params.b_out,
        D1=np.ones_like(params.D1),
        D2=np.ones_like(params.D2),
    )


@dataclass(frozen=True)
class ToyModel:
    """A seeded stack of L blocks over d-dim tokens (CLS, registers, patches).

    Token layout: index 0 is CLS, the next ``n_register`` indices are
    register tokens, the rest are patches. Forward passes are deterministic
    functions of (seed, input).
    """

    blocks: tuple
    d: int
    t: int
    n_register: int
    seed: int
    d_ff: int
    heads: int

    @property
    def L(self) -> int:
        return len(self.blocks)

    @property
    def t_kept(self) -> int:
        return self.t - self.n_register

    @property
    def kept_indices(self) -> np.ndarray:
        # CLS stays at 0; registers at 1..n_register are dropped
        return np.concatenate(
            [[0], np.arange(1 + self.n_register, self.t)]
        ).astype(int)

    def to_spec(self) -> str:
        """Seeded-spec JSON: regeneration is deterministic, no raw weights."""
        return json.dumps(
            {
                "seed": self.seed, "d": self.d, "t": self.t, "L": self.L,
                "n_register": self.n_register, "d_ff": self.d_ff, "heads": self.heads,
            },
            sort_keys=True,
        )

    @classmethod
    def from_spec(cls, spec: str) -> "ToyModel":
        cfg = json.loads(spec)
        return make_toy_model(
            seed=cfg["seed"], d=cfg["d"], t=cfg["t"], L=cfg["L"],
            n_register=cfg["n_register"], d_ff=cfg["d_ff"], heads=cfg["heads"],
        )


def make_toy_model(
    seed: int = 42,
    d: int = 32,
    heads: int = 4,
    d_ff: int = 128,
    t: int = 21,
    n_register: int = 4,
    L: int = 12,
) -> ToyModel:
    """Default desk-scale model: orthogonal-ish projections scaled by
    1/sqrt(d), LayerScale diagonals log-uniform in [1e-2, 1]."""
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(L):
        blocks.append(
            ToyBlockParams(
                Wq=_semi_orthogonal(d, d, rng),
                Wk=_semi_orthogonal(d, d, rng),
                Wv=_semi_orthogonal(d, d, rng),
                Wo=_semi_orthogonal(d, d, rng),
                W_in=_semi_orthogonal(d_ff, d, rng),
                b_in=0.1 * rng.standard_normal(d_ff),
                W_out=_semi_orthogonal(d, d_ff, rng),
                b_out=0.1 * rng.standard_normal(d),
                D1=np.exp(rng.uniform(np.log(1e-2), np.log(1.0), size=d)),
                D2=np.exp(rng.uniform(np.log(1e-2), np.log(1.0), size=d)),
                ln1_gain=np.ones(d) + 0.05 * rng.standard_normal(d),
                ln1_bias=0.05 * rng.standard_normal(d),
                ln2_gain=np.ones(d) + 0.05 * rng.standard_normal(d),
                ln2_bias=0.05 * rng.standard_normal(d),
                heads=heads,
            )
        )
    return ToyModel(
        blocks=tuple(blocks), d=d, t=t, n_register=n_register,
        seed=seed, d_ff=d_ff, heads=heads,
    )


def make_inputs(model: ToyModel, B: int, seed: int = 0) -> np.ndarray:
    """Seeded standard-normal input batch of shape (d, t, B)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((model.d, model.t, B))


def forward_collect(model: ToyModel, inputs: np.ndarray):
    """Run all blocks, returning (states, attn_residuals, mlp_taps).

    ``states[l]`` is the full-token X_l for l = 0..L (states[0] is the
    input); the tap lists are indexed by block l = 1..L at position l-1.
    Taps are recorded with LayerScale applied, so X_l - A_l matches the
    recorded MLP tap to f64 rounding.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[:2] != (model.d, model.t):
        raise ValidationError(f"inputs must be (d={model.d}, t={model.t}, B)")
    states, attns, mlps = [x], [], []
    for idx, blk in enumerate(model.blocks):
        x, a, m = block_forward(blk, x, return_taps=True)
        if not np.isfinite(x).all():
            raise GenerationError(f"non-finite activations after block {idx + 1}")
        states.append(x)
        attns.append(a)
        mlps.append(m)
    return states, attns, mlps


def forward_with_taps(model: ToyModel, inputs: np.ndarray, i: int, p: int) -> SnapshotSpan:
    """Run the full network and record the span (i, p) with register tokens
    discarded, LayerScale folded into the recorded branch outputs. Taps
    A_i, M_i are recorded for i >= 1 (block i is the kept block); at i = 0
    the span starts at the raw input and has no taps."""
    if i < 0 or p < 1 or i + p > model.L:
        raise ValidationError(f"invalid span (i={i}, p={p}) for L={model.L}")
    states, attns, mlps = forward_collect(model, inputs)
    keep = model.kept_indices
    B = inputs.shape[2]
    dims = SpanDims(
        d=model.d, t=model.t, B=B, p=p, i=i, L=model.L,
        n_register=model.n_register, cls_index=0,
    )
    span_states = tuple(states[i + q][:, keep, :] for q in range(p + 1))
    anchor = mlp_tap = None
    if i >= 1:
        anchor = attns[i - 1][:, keep, :]
        mlp_tap = mlps[i - 1][:, keep, :]
    return SnapshotSpan(dims=dims, states=span_states, anchor=anchor, mlp_tap=mlp_tap)


def run_remaining_blocks(
    model: ToyModel,
    substituted: np.ndarray,
    i: int,
    p: int,
    reference_state: np.ndarray,
) -> np.ndarray:
    """Run blocks i+p+1 .. L on a substituted state and return kept-token X_L.

    ``substituted`` holds kept tokens only (d, t_kept, B); ground-truth
    register-token states are re-inserted from ``reference_state``, the
    full-token X_{i+p} of the uninterrupted run. When i+p = L the input is
    returned unchanged.
    """
    keep = model.kept_indices
    substituted = np.asarray(substituted, dtype=np.float64)
    if substituted.shape[:2] != (model.d, model.t_kept):
        raise ValidationError(
            f"substituted state must be (d={model.d}, t_kept={model.t_kept}, B)"
        )
    if i + p > model.L:
        raise ValidationError(f"i+p={i + p} exceeds depth L={model.L}")
    if i + p == model.L:
        return substituted
    reference_state = np.asarray(reference_state, dtype=np.float64)
    if reference_state.shape != (model.d, model.t, substituted.shape[2]):
        raise ValidationError("reference state must be the full-token X_{i+p}")
    x = reference_state.copy()
    x[:, keep, :] = substituted
    for blk in model.blocks[i + p:]:
        x = block_forward(blk, x)
    return x[:, keep, :]


@dataclass(frozen=True)
class LinearSystem:
    """Exact linear dynamics X_{q+1} = K X_q, the oracle for recovery tests."""

    K: np.ndarray

    MAX_RHO = 1.05

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        object.__setattr__(self, "K", K)
        rho = float(np.abs(np.linalg.eigvals(K)).max()) if K.size else 0.0
        if rho > self.MAX_RHO:
            raise ValidationError(f"spectral radius {rho:.3f} exceeds {self.MAX_RHO}")

    @property
    def d(self) -> int:
        return self.K.shape[0]


def random_linear_system(d: int, rho: float = 0.9, seed: int = 0) -> LinearSystem:
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((d, d))
    K *= rho / np.abs(np.linalg.eigvals(K)).max()
    return LinearSystem(K=K)


def generate_linear_span(system: LinearSystem, dims: SpanDims, seed: int = 0) -> SnapshotSpan:
    """Seeded exact-linear span: X_0 ~ N(0, 1), X_{q+1} = K X_q.

    The anchor is zero and the MLP tap is X_0, so anchored fitting on these
    spans reduces to full-state fitting.
    """
    if dims.d != system.d:
        raise ValidationError(f"dims.d={dims.d} does not match system d={system.d}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dims.state_shape)
    states = [x]
    for _ in range(dims.p):
        x = np.einsum("ef,ftb->etb", system.K, x)
        if not np.isfinite(x).all() or np.linalg.norm(x) > 1e3 * max(np.linalg.norm(states[0]), 1e-30):
            raise GenerationError("linear trajectory blew up")
        states.append(x)
    return SnapshotSpan(
        dims=dims,
        states=tuple(states),
        anchor=np.zeros(dims.state_shape),
        mlp_tap=states[0],
    )
