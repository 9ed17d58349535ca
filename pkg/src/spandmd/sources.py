"""Snapshot sources feeding the experiment sweeps.

A source hands out calibration and evaluation spans for any valid
(cut start, prune length). Three implementations:

* ``ToySource``    -- a seeded toy transformer; caches the full forward
                      trajectories of a calibration and an evaluation batch.
* ``LinearSource`` -- an exact linear system; the ground-truth oracle.
* ``FileSource``   -- a directory of SDMS files, one span per file, as
                      produced by the generate command or an exporter.

Calibration and evaluation images never overlap: both toy-style sources
draw a single seeded pool and split it by index.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .snapshot import SnapshotSpan, SpanDims, peek_dims, read_span
from .toymodel import (
    LinearSystem,
    ToyModel,
    forward_collect,
    make_inputs,
    make_toy_model,
    random_linear_system,
)


class ToySource:
    """Span source backed by a seeded toy transformer.

    The calibration pool and evaluation batch are disjoint index ranges of
    one seeded input tensor. ``calibration_span(i, p, budget=B)`` restricts
    to the first B calibration images, which is how budget sweeps emulate
    varying calibration set sizes.
    """

    def __init__(self, model: ToyModel, B_cal: int = 64, B_eval: int = 128, seed: int = 0):
        self.model = model
        self.seed = seed
        self.B_cal = B_cal
        self.B_eval = B_eval
        pool = make_inputs(model, B_cal + B_eval, seed=seed)
        self._cal = self._run(pool[:, :, :B_cal])
        self._eval = self._run(pool[:, :, B_cal:])

    def _run(self, inputs):
        states, attns, mlps = forward_collect(self.model, inputs)
        return {"states": states, "attns": attns, "mlps": mlps}

    @property
    def L(self) -> int:
        return self.model.L

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def source_id(self) -> str:
        return (
            f"toy(seed={self.model.seed},d={self.model.d},t={self.model.t},"
            f"L={self.model.L},B_cal={self.B_cal},B_eval={self.B_eval},input_seed={self.seed})"
        )

    def starts(self, p: int, include_zero: bool = False):
        """Valid cut starts for prune length p (i >= 1 so taps exist)."""
        first = 0 if include_zero else 1
        return list(range(first, self.L - p + 1))

    def _span(self, cache, i: int, p: int, budget=None) -> SnapshotSpan:
        model = self.model
        keep = model.kept_indices
        sl = slice(None) if budget is None else slice(0, budget)
        B = cache["states"][0][:, :, sl].shape[2]
        dims = SpanDims(
            d=model.d, t=model.t, B=B, p=p, i=i, L=model.L,
            n_register=model.n_register, cls_index=0,
        )
        states = tuple(cache["states"][i + q][:, keep, sl] for q in range(p + 1))
        anchor = mlp_tap = None
        if i >= 1:
            anchor = cache["attns"][i - 1][:, keep, sl]
            mlp_tap = cache["mlps"][i - 1][:, keep, sl]
        return SnapshotSpan(dims=dims, states=states, anchor=anchor, mlp_tap=mlp_tap)

    def calibration_span(self, i: int, p: int, budget: int | None = None) -> SnapshotSpan:
        if budget is not None and budget > self.B_cal:
            raise ValidationError(f"budget {budget} exceeds calibration pool {self.B_cal}")
        return self._span(self._cal, i, p, budget)

    def evaluation_span(self, i: int, p: int) -> SnapshotSpan:
        return self._span(self._eval, i, p)

    # downstream evaluation needs the raw full-token trajectories
    def evaluation_full_state(self, ell: int) -> np.ndarray:
        return self._eval["states"][ell]

    def evaluation_kept_state(self, ell: int) -> np.ndarray:
        return self._eval["states"][ell][:, self.model.kept_indices, :]

    @classmethod
    def default(cls, seed: int = 42, B_cal: int = 64, B_eval: int = 128,
                input_seed: int | None = None, **model_kwargs) -> "ToySource":
        model = make_toy_model(seed=seed, **model_kwargs)
        return cls(model, B_cal=B_cal, B_eval=B_eval,
                   seed=seed + 1 if input_seed is None else input_seed)


class LinearSource:
    """Span source generated by an exact linear system X_{q+1} = K X_q.

    Spans carry a zero anchor and an M_i tap equal to the span's first
    state, so anchored fitting collapses to full fitting, as on any
    zero-anchor data.
    """

    def __init__(self, system: LinearSystem, L: int = 12, t_kept: int = 5,
                 B_cal: int = 64, B_eval: int = 128, seed: int = 0):
        self.system = system
        self.depth = L
        self.t_kept = t_kept
        self.B_cal = B_cal
        self.B_eval = B_eval
        self.seed = seed
        rng = np.random.default_rng(seed)
        pool = rng.standard_normal((system.d, t_kept, B_cal + B_eval))
        traj = [pool]
        for _ in range(L):
            traj.append(np.einsum("ef,ftb->etb", system.K, traj[-1]))
        self._traj = traj

    @property
    def L(self) -> int:
        return self.depth

    @property
    def d(self) -> int:
        return self.system.d

    @property
    def source_id(self) -> str:
        return (
            f"linear(d={self.system.d},L={self.depth},t_kept={self.t_kept},"
            f"B_cal={self.B_cal},B_eval={self.B_eval},seed={self.seed})"
        )

    def starts(self, p: int, include_zero: bool = False):
        first = 0 if include_zero else 1
        return list(range(first, self.depth - p + 1))

    def _span(self, i: int, p: int, sl) -> SnapshotSpan:
        B = self._traj[0][:, :, sl].shape[2]
        dims = SpanDims(
            d=self.system.d, t=self.t_kept, B=B, p=p, i=i, L=self.depth,
            n_register=0, cls_index=0,
        )
        states = tuple(self._traj[i + q][:, :, sl] for q in range(p + 1))
        return SnapshotSpan(
            dims=dims, states=states,
            anchor=np.zeros_like(states[0]), mlp_tap=states[0],
        )

    def calibration_span(self, i: int, p: int, budget: int | None = None) -> SnapshotSpan:
        budget = self.B_cal if budget is None else budget
        if budget > self.B_cal:
            raise ValidationError(f"budget {budget} exceeds calibration pool {self.B_cal}")
        return self._span(i, p, slice(0, budget))

    def evaluation_span(self, i: int, p: int) -> SnapshotSpan:
        return self._span(i, p, slice(self.B_cal, self.B_cal + self.B_eval))

    @classmethod
    def default(cls, seed: int = 42, d: int = 8, rho: float = 0.9, **kwargs) -> "LinearSource":
        return cls(random_linear_system(d, rho=rho, seed=seed), seed=seed + 1, **kwargs)


class FileSource:
    """Span source over directories of SDMS files (one span per file).

    ``eval_dir`` may be omitted, in which case evaluation falls back to the
    calibration files; the provenance string records the fallback.
    """

    def __init__(self, cal_dir, eval_dir=None, strict: bool = True):
        self.cal_dir = Path(cal_dir)
        self.eval_dir = None if eval_dir is None else Path(eval_dir)
        self.strict = strict
        self._cal_index = self._index(self.cal_dir)
        if not self._cal_index:
            raise ValidationError(f"no .sdms files under {self.cal_dir}")
        self._eval_index = self._index(self.eval_dir) if self.eval_dir else {}
        any_dims = next(iter(self._cal_index.values()))[1]
        self._d = any_dims.d
        self._L = any_dims.L

    @staticmethod
    def _index(directory):
        if directory is None:
            return {}
        index = {}
        for path in sorted(directory.glob("*.sdms")):
            dims = peek_dims(path)  # header only; payload reads are deferred
            index[(dims.i, dims.p)] = (path, dims)
        return index

    @property
    def L(self) -> int:
        return self._L

    @property
    def d(self) -> int:
        return self._d

    @property
    def source_id(self) -> str:
        ev = self.eval_dir if self.eval_dir else "calibration-fallback"
        return f"files(cal={self.cal_dir},eval={ev})"

    def starts(self, p: int, include_zero: bool = False):
        return sorted(i for (i, pp) in self._cal_index if pp == p)

    def calibration_span(self, i: int, p: int, budget: int | None = None) -> SnapshotSpan:
        try:
            path, _ = self._cal_index[(i, p)]
        except KeyError:
            raise ValidationError(f"no calibration file for span (i={i}, p={p})")
        span = read_span(path, strict=self.strict)
        if budget is None:
            return span
        if budget > span.dims.B:
            raise ValidationError(f"budget {budget} exceeds file images {span.dims.B}")
        return _slice_images(span, slice(0, budget))

    def evaluation_span(self, i: int, p: int) -> SnapshotSpan:
        index = self._eval_index or self._cal_index
        if not self._eval_index:
            warnings.warn("no evaluation directory; evaluating on calibration files")
        try:
            path, _ = index[(i, p)]
        except KeyError:
            raise ValidationError(f"no evaluation file for span (i={i}, p={p})")
        return read_span(path, strict=self.strict)


def _slice_images(span: SnapshotSpan, sl) -> SnapshotSpan:
    d = span.dims
    B = span.states[0][:, :, sl].shape[2]
    dims = SpanDims(d=d.d, t=d.t, B=B, p=d.p, i=d.i, L=d.L,
                    n_register=d.n_register, cls_index=d.cls_index)
    return SnapshotSpan(
        dims=dims,
        states=tuple(s[:, :, sl] for s in span.states),
        anchor=None if span.anchor is None else span.anchor[:, :, sl],
        mlp_tap=None if span.mlp_tap is None else span.mlp_tap[:, :, sl],
    )


def make_source(kind: str, seed: int = 42, **kwargs):
    if kind == "toy":
        return ToySource.default(seed=seed, **kwargs)
    if kind == "linear":
        return LinearSource.default(seed=seed, **kwargs)
    raise ValidationError(f"unknown source kind {kind!r}")
