"""Span extraction: run the network once, capture the span via hooks, write SDMS.

For a cut start i >= 1 the kept block is block i (1-based over the depth);
its post-attention residual A_i is captured at the pre-MLP LayerNorm input
and its LayerScale-folded MLP output M_i at the second-branch output, so
the recorded arrays satisfy X_i - A_i = M_i to float32 rounding. Register
tokens are stripped from everything written; token 0 is CLS.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .models import VitHandle, resolve_model
from .preprocess import image_list_hash, load_image_batch, preprocessing_hash
from .sdms import write_sdms


@dataclass
class ExportSpec:
    model_id: str
    cut_start: int
    prune_length: int
    n_images: int
    image_dir: str
    out_path: str
    batch_size: int = 32
    seed: int = 0  # only used by the local test models

    def __post_init__(self):
        if self.prune_length < 1:
            raise ValueError(f"prune length must be >= 1, got {self.prune_length}")
        if self.cut_start < 0:
            raise ValueError(f"cut start must be >= 0, got {self.cut_start}")


class _BlockTap:
    """Forward hooks over one block: output state, plus A/M for the kept block."""

    def __init__(self, block, capture_branches: bool):
        self.output = None
        self.anchor = None
        self.mlp_scaled = None
        self.handles = [block.register_forward_hook(self._on_output)]
        if capture_branches:
            norm2 = getattr(block, "norm2", None)
            branch = getattr(block, "ls2", None)
            if branch is None or isinstance(branch, torch.nn.Identity):
                branch = getattr(block, "mlp", None)
                warnings.warn(
                    "block has no LayerScale on the MLP branch; folding is the identity"
                )
            if norm2 is None or branch is None:
                raise RuntimeError("kept block lacks norm2/mlp structure; cannot tap branches")
            self.handles.append(norm2.register_forward_pre_hook(self._on_anchor))
            self.handles.append(branch.register_forward_hook(self._on_branch))

    def _on_output(self, module, args, output):
        self.output = output.detach()

    def _on_anchor(self, module, args):
        self.anchor = args[0].detach()

    def _on_branch(self, module, args, output):
        self.mlp_scaled = output.detach()

    def remove(self):
        for h in self.handles:
            h.remove()


def _to_span_axes(tokens: torch.Tensor, keep: np.ndarray) -> np.ndarray:
    # (B, t, d) -> kept tokens only, axes (d, t_kept, B)
    arr = tokens[:, keep, :].cpu().numpy().astype(np.float32)
    return arr.transpose(2, 1, 0)


def capture_span(handle: VitHandle, images: torch.Tensor, i: int, p: int,
                 batch_size: int = 32):
    """Run all blocks over the batch, returning (states, anchor, mlp_tap).

    ``states`` has p+1 arrays of shape (d, t_kept, B); taps are None at i=0.
    """
    L = handle.depth
    if i + p > L:
        raise ValueError(f"span (i={i}, p={p}) overruns depth L={L}")
    t_total = None
    keep = None

    taps = []
    capture = list(range(i, i + p + 1))  # 1-based block indices whose X we keep
    chunks = {q: [] for q in capture}
    anchor_chunks, mlp_chunks = [], []

    for blk_idx, block in enumerate(handle.blocks, start=1):
        wants_output = blk_idx in capture
        wants_branches = blk_idx == i  # the kept block supplies A_i, M_i
        if wants_output or wants_branches:
            taps.append((blk_idx, _BlockTap(block, wants_branches)))

    try:
        with torch.inference_mode():
            for start in range(0, images.shape[0], batch_size):
                batch = images[start:start + batch_size]
                x = handle.embed_tokens(batch)
                if t_total is None:
                    t_total = x.shape[1]
                    keep = np.concatenate(
                        [[0], np.arange(1 + handle.n_register, t_total)]
                    ).astype(int)
                if 0 in capture:
                    chunks[0].append(_to_span_axes(x, keep))
                for blk_idx, block in enumerate(handle.blocks, start=1):
                    x = block(x)
                for blk_idx, tap in taps:
                    if blk_idx in chunks and tap.output is not None:
                        chunks[blk_idx].append(_to_span_axes(tap.output, keep))
                    if blk_idx == i and tap.anchor is not None:
                        anchor_chunks.append(_to_span_axes(tap.anchor, keep))
                        mlp_chunks.append(_to_span_axes(tap.mlp_scaled, keep))
    finally:
        for _, tap in taps:
            tap.remove()

    states = [np.concatenate(chunks[q], axis=2) for q in capture]
    anchor = np.concatenate(anchor_chunks, axis=2) if anchor_chunks else None
    mlp_tap = np.concatenate(mlp_chunks, axis=2) if mlp_chunks else None
    if not all(np.isfinite(s).all() for s in states):
        raise RuntimeError("non-finite activations captured; refusing to export")
    return states, anchor, mlp_tap


def export_span(spec: ExportSpec) -> dict:
    """Extract one span per the spec and write the SDMS file plus manifest.

    Returns the manifest dict (also written next to the output file).
    """
    handle = resolve_model(spec.model_id, seed=spec.seed)
    if spec.cut_start + spec.prune_length > handle.depth:
        raise ValueError(
            f"span (i={spec.cut_start}, p={spec.prune_length}) overruns "
            f"model depth {handle.depth}"
        )
    images, paths = load_image_batch(spec.image_dir, spec.n_images)
    states, anchor, mlp_tap = capture_span(
        handle, images, spec.cut_start, spec.prune_length, spec.batch_size
    )
    d, t_kept, B = states[0].shape
    dims = {
        "d": d, "t_kept": t_kept, "B": B, "p": spec.prune_length,
        "i": spec.cut_start, "L": handle.depth,
        "n_register": handle.n_register, "cls_index": 0,
    }
    nbytes = write_sdms(spec.out_path, dims, states, anchor=anchor, mlp_tap=mlp_tap)
    manifest = {
        "model_id": handle.model_id,
        "dims": dims,
        "bytes": nbytes,
        "taps_present": anchor is not None,
        "preprocessing_hash": preprocessing_hash(),
        "image_list_hash": image_list_hash(paths),
        "n_images": len(paths),
        "token_layout": "cls at index 0, then patches (registers removed)",
        "out": str(spec.out_path),
    }
    manifest_path = Path(spec.out_path).with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
