"""Standalone SDMS v1 writer (the wire format shared with the fitting toolkit).

Little-endian layout: magic "SDMS", u32 version=1, u32 fields
(d, t_kept, B, p, i, L, n_register, cls_index), u8 dtype (0 = f32),
u8 flags (bit0 anchor, bit1 mlp_tap), zero padding to a 64-byte header.
Arrays follow: the p+1 span states, then anchor, then mlp_tap when
present, each stored with index ((b * t_kept + tau) * d + f), f fastest.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"SDMS"
VERSION = 1
HEADER_SIZE = 64
_HEADER_FMT = "<4sI8IBB"

FLAG_ANCHOR = 0x01
FLAG_MLP_TAP = 0x02


def _array_bytes(arr: np.ndarray) -> bytes:
    # arr is (d, t_kept, B); disk order is image-major, token, feature-fastest
    return np.ascontiguousarray(arr.transpose(2, 1, 0), dtype="<f4").tobytes()


def write_sdms(path, dims: dict, states, anchor=None, mlp_tap=None) -> int:
    """Atomically write one span file; returns the byte count.

    ``dims`` must carry d, t_kept, B, p, i, L, n_register, cls_index.
    ``states`` is the sequence X_i..X_{i+p} of (d, t_kept, B) arrays.
    """
    d, t_kept, B = states[0].shape
    if len(states) != dims["p"] + 1:
        raise ValueError(f"need p+1={dims['p'] + 1} states, got {len(states)}")
    if (d, t_kept, B) != (dims["d"], dims["t_kept"], dims["B"]):
        raise ValueError("state shapes disagree with dims")

    flags = 0
    if anchor is not None:
        flags |= FLAG_ANCHOR
    if mlp_tap is not None:
        flags |= FLAG_MLP_TAP
    header = struct.pack(
        _HEADER_FMT, MAGIC, VERSION,
        dims["d"], dims["t_kept"], dims["B"], dims["p"], dims["i"], dims["L"],
        dims["n_register"], dims["cls_index"], 0, flags,
    ).ljust(HEADER_SIZE, b"\x00")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".sdms.tmp")
    total = 0
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            total = HEADER_SIZE
            for arr in list(states) + [anchor, mlp_tap]:
                if arr is None:
                    continue
                payload = _array_bytes(np.asarray(arr))
                fh.write(payload)
                total += len(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return total
