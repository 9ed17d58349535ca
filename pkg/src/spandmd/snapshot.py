"""Hidden-state span data model and the SDMS binary file format.

A span caches the depth-wise trajectory ``X_i .. X_{i+p}`` of a residual
network over ``p`` blocks, together with the optional branch taps ``A_i``
(post-attention residual) and ``M_i`` (MLP output of the kept block).
Register tokens are discarded at extraction time, so arrays in a span hold
``t_kept = t - n_register`` tokens and files never contain register state.

Arrays are indexed ``[feature, token, image]`` with shape ``(d, t_kept, B)``.
All fitting downstream happens in float64; files store float32 payloads.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, FormulationError, ValidationError

MAGIC = b"SDMS"
VERSION = 1
HEADER_SIZE = 64
_HEADER_FMT = "<4sI8IBB"  # magic, version, 8 dim fields, dtype, flags
_DTYPE_F32 = 0

FLAG_ANCHOR = 0x01
FLAG_MLP_TAP = 0x02


@dataclass(frozen=True)
class SpanDims:
    """Dimension metadata for one cached span.

    ``t`` counts tokens before register discarding; arrays carry ``t_kept``.
    ``i`` is the 0-based cut start: the span covers blocks ``i+1 .. i+p`` of
    an ``L``-block network, so ``i + p <= L``.
    """

    d: int
    t: int
    B: int
    p: int
    i: int
    L: int
    n_register: int = 4
    cls_index: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError(f"feature dimension must be >= 1, got {self.d}")
        if self.t < 1:
            raise ValidationError(f"token count must be >= 1, got {self.t}")
        if self.B < 1:
            raise ValidationError(f"image count must be >= 1, got {self.B}")
        if self.p < 1:
            raise ValidationError(f"prune length must be >= 1, got {self.p}")
        if self.i < 0:
            raise ValidationError(f"cut start must be >= 0, got {self.i}")
        if self.i + self.p > self.L:
            raise ValidationError(
                f"span overruns the network: i={self.i} + p={self.p} > L={self.L}"
            )
        if not 0 <= self.n_register < self.t:
            raise ValidationError(
                f"register count {self.n_register} must satisfy 0 <= n_register < t={self.t}"
            )
        if not 0 <= self.cls_index < self.t_kept:
            raise ValidationError(
                f"cls_index {self.cls_index} out of range for {self.t_kept} kept tokens"
            )

    @property
    def t_kept(self) -> int:
        return self.t - self.n_register

    @property
    def state_shape(self) -> tuple:
        return (self.d, self.t_kept, self.B)


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SnapshotSpan:
    """Immutable trajectory ``X_i .. X_{i+p}`` plus optional branch taps.

    When both taps are present the post-folding identity
    ``states[0] - anchor == mlp_tap`` must hold to 1e-5 relative.
    """

    dims: SpanDims
    states: tuple
    anchor: np.ndarray | None = None
    mlp_tap: np.ndarray | None = None

    TAP_RTOL = 1e-5

    def __post_init__(self):
        states = tuple(_freeze(s) for s in self.states)
        object.__setattr__(self, "states", states)
        if self.anchor is not None:
            object.__setattr__(self, "anchor", _freeze(self.anchor))
        if self.mlp_tap is not None:
            object.__setattr__(self, "mlp_tap", _freeze(self.mlp_tap))
        self._validate()

    def _validate(self):
        dims = self.dims
        if len(self.states) != dims.p + 1:
            raise ValidationError(
                f"span must hold p+1={dims.p + 1} states, got {len(self.states)}"
            )
        shape = dims.state_shape
        for q, s in enumerate(self.states):
            if s.shape != shape:
                raise ValidationError(
                    f"state {q} has shape {s.shape}, expected {shape}"
                )
        for name, tap in (("anchor", self.anchor), ("mlp_tap", self.mlp_tap)):
            if tap is not None and tap.shape != shape:
                raise ValidationError(
                    f"{name} has shape {tap.shape}, expected {shape}"
                )
        if self.anchor is not None and self.mlp_tap is not None:
            resid = self.states[0] - self.anchor
            scale = np.abs(self.mlp_tap).max()
            err = np.abs(resid - self.mlp_tap).max()
            # f32 payloads quantize X_i and A_i at the state scale, so the
            # residual cannot be certified tighter than a few state ulps
            quant_floor = 8 * 2.0**-24 * np.abs(self.states[0]).max()
            if err > self.TAP_RTOL * max(scale, 1e-30) + quant_floor:
                raise ValidationError(
                    f"tap identity violated: max|X_i - A_i - M_i| = {err:.3e} "
                    f"exceeds {self.TAP_RTOL:.0e} * max|M_i| = {self.TAP_RTOL * scale:.3e}"
                )

    @property
    def has_taps(self) -> bool:
        return self.anchor is not None and self.mlp_tap is not None


@dataclass(frozen=True)
class DataMatrixPair:
    """Stacked snapshot matrices ``Z, Z'`` of shape ``(d, M)``.

    Columns of ``Zp`` are the one-step successors of the matching columns
    of ``Z``. ``dropped`` counts non-finite column pairs removed when the
    pair was built in permissive mode.
    """

    Z: np.ndarray
    Zp: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "Z", _freeze(self.Z))
        object.__setattr__(self, "Zp", _freeze(self.Zp))
        if self.Z.shape != self.Zp.shape:
            raise ValidationError(
                f"Z and Zp shapes differ: {self.Z.shape} vs {self.Zp.shape}"
            )
        if self.Z.ndim != 2:
            raise ValidationError("Z must be a 2-D matrix")

    @property
    def d(self) -> int:
        return self.Z.shape[0]

    @property
    def M(self) -> int:
        return self.Z.shape[1]


def _columns(state: np.ndarray) -> np.ndarray:
    # (d, t_kept, B) -> (d, B*t_kept) with image-major, token-minor columns
    d = state.shape[0]
    return state.transpose(2, 1, 0).reshape(-1, d).T


def _drop_nonfinite(Z, Zp):
    keep = np.isfinite(Z).all(axis=0) & np.isfinite(Zp).all(axis=0)
    dropped = int(Z.shape[1] - keep.sum())
    if dropped:
        warnings.warn(f"dropped {dropped} non-finite column pair(s)")
        Z, Zp = Z[:, keep], Zp[:, keep]
    return Z, Zp, dropped


def stack_pairs(span: SnapshotSpan, permissive: bool = False) -> DataMatrixPair:
    """Pool all consecutive snapshot pairs of a span into ``(Z, Zp)``.

    Column order is step-outer, image-middle, token-inner and is fixed:
    column ``(q*B + b)*t_kept + tau`` of ``Z`` is ``X_{i+q}[:, tau, b]`` and
    the same column of ``Zp`` is ``X_{i+q+1}[:, tau, b]``.
    """
    Z = np.hstack([_columns(s) for s in span.states[:-1]])
    Zp = np.hstack([_columns(s) for s in span.states[1:]])
    dropped = 0
    if permissive:
        Z, Zp, dropped = _drop_nonfinite(Z, Zp)
    return DataMatrixPair(Z, Zp, dropped=dropped)


def stack_residual_pairs(span: SnapshotSpan, permissive: bool = False) -> DataMatrixPair:
    """Pool pairs of the anchored residual trajectory ``X_{i+q} - A_i``.

    Pooling and column order match :func:`stack_pairs`; the q=0 residual
    equals the kept block's MLP output when the taps are consistent.
    """
    if span.anchor is None:
        raise FormulationError("anchored stacking requires the A_i tap")
    residuals = [s - span.anchor for s in span.states]
    Z = np.hstack([_columns(r) for r in residuals[:-1]])
    Zp = np.hstack([_columns(r) for r in residuals[1:]])
    dropped = 0
    if permissive:
        Z, Zp, dropped = _drop_nonfinite(Z, Zp)
    return DataMatrixPair(Z, Zp, dropped=dropped)


def endpoint_pair(span: SnapshotSpan) -> DataMatrixPair:
    """Endpoint regression data: ``Z`` holds ``M_i`` columns, ``Zp`` holds
    ``X_{i+p} - A_i`` columns (image-major, token-minor; B*t_kept samples)."""
    if span.anchor is None or span.mlp_tap is None:
        raise FormulationError("endpoint regression requires the A_i and M_i taps")
    Z = _columns(span.mlp_tap)
    Zp = _columns(span.states[-1] - span.anchor)
    return DataMatrixPair(Z, Zp)


def _array_to_bytes(arr: np.ndarray) -> bytes:
    # disk layout index ((b*t_kept + tau)*d + f), f fastest
    return np.ascontiguousarray(arr.transpose(2, 1, 0), dtype="<f4").tobytes()


def _array_nbytes(dims: SpanDims) -> int:
    return 4 * dims.d * dims.t_kept * dims.B


def write_span(span: SnapshotSpan, destination) -> int:
    """Serialize a span to the SDMS v1 format; returns the byte count.

    ``destination`` is a binary file-like object or a path. Payload is
    little-endian float32. Round-trips bit-exactly for f32 payloads.
    """
    if isinstance(destination, str) or hasattr(destination, "__fspath__"):
        with open(destination, "wb") as fh:
            return write_span(span, fh)

    dims = span.dims
    flags = 0
    if span.anchor is not None:
        flags |= FLAG_ANCHOR
    if span.mlp_tap is not None:
        flags |= FLAG_MLP_TAP
    header = struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        dims.d,
        dims.t_kept,
        dims.B,
        dims.p,
        dims.i,
        dims.L,
        dims.n_register,
        dims.cls_index,
        _DTYPE_F32,
        flags,
    )
    header = header.ljust(HEADER_SIZE, b"\x00")

    try:
        written = destination.write(header)
        if written is not None and written != HEADER_SIZE:
            raise IOError("short header write")
        total = HEADER_SIZE
        for arr in list(span.states) + [span.anchor, span.mlp_tap]:
            if arr is None:
                continue
            payload = _array_to_bytes(arr)
            destination.write(payload)
            total += len(payload)
    except OSError as exc:
        raise IOError(f"failed writing SDMS stream: {exc}") from exc
    return total


def _read_exact(source, n: int, what: str) -> bytes:
    buf = source.read(n)
    if buf is None or len(buf) < n:
        raise FormatError(f"truncated payload: {what} (wanted {n} bytes, got {len(buf or b'')})")
    return buf


def read_span(source, strict: bool = True) -> SnapshotSpan:
    """Parse an SDMS v1 stream back into a :class:`SnapshotSpan`.

    Rejects bad magic, unknown versions, truncated payloads and trailing
    garbage. In strict mode (default), non-finite payload values raise
    :class:`FormatError`; permissive mode loads them as-is.
    """
    if isinstance(source, (bytes, bytearray)):
        return read_span(io.BytesIO(source), strict=strict)
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return read_span(fh, strict=strict)

    header = _read_exact(source, HEADER_SIZE, "header")
    magic, version, d, t_kept, B, p, i, L, n_register, cls_index, dtype, flags = (
        struct.unpack(_HEADER_FMT, header[: struct.calcsize(_HEADER_FMT)])
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported SDMS version {version}, expected {VERSION}")
    if dtype != _DTYPE_F32:
        raise FormatError(f"unsupported payload dtype code {dtype}")

    dims = SpanDims(
        d=d, t=t_kept + n_register, B=B, p=p, i=i, L=L,
        n_register=n_register, cls_index=cls_index,
    )
    nbytes = _array_nbytes(dims)

    def read_array(what: str) -> np.ndarray:
        raw = _read_exact(source, nbytes, what)
        flat = np.frombuffer(raw, dtype="<f4")
        if strict and not np.isfinite(flat).all():
            raise FormatError(f"non-finite values in {what} (strict mode)")
        return flat.reshape(B, t_kept, d).transpose(2, 1, 0).astype(np.float64)

    states = [read_array(f"layer array {q}") for q in range(p + 1)]
    anchor = read_array("anchor array") if flags & FLAG_ANCHOR else None
    mlp_tap = read_array("mlp_tap array") if flags & FLAG_MLP_TAP else None

    trailing = source.read(1)
    if trailing:
        raise FormatError("trailing garbage after final array")

    return SnapshotSpan(dims=dims, states=tuple(states), anchor=anchor, mlp_tap=mlp_tap)


def peek_dims(source) -> SpanDims:
    """Parse only the 64-byte header; cheap indexing of span files."""
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return peek_dims(fh)
    header = _read_exact(source, HEADER_SIZE, "header")
    magic, version, d, t_kept, B, p, i, L, n_register, cls_index, dtype, _flags = (
        struct.unpack(_HEADER_FMT, header[: struct.calcsize(_HEADER_FMT)])
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported SDMS version {version}, expected {VERSION}")
    return SpanDims(d=d, t=t_kept + n_register, B=B, p=p, i=i, L=L,
                    n_register=n_register, cls_index=cls_index)


def expected_file_size(dims: SpanDims, with_taps: bool) -> int:
    """Byte count of an SDMS file computed from the format layout."""
    n_arrays = dims.p + 1 + (2 if with_taps else 0)
    return HEADER_SIZE + n_arrays * _array_nbytes(dims)
