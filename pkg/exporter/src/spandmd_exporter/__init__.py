"""spandmd-exporter: pretrained-ViT hidden states to SDMS span files.

Hooks capture the span trajectory X_i..X_{i+p} plus the kept block's
post-attention residual A_i and LayerScale-folded MLP output M_i, discard
register tokens, and emit the SDMS v1 binary format consumed by the
spandmd fitting toolkit. The exporter writes files only; it never fits
operators or computes metrics.
"""

from .export import ExportSpec, export_span
from .models import build_tiny_vit, resolve_model
from .preprocess import load_image_batch, preprocessing_hash
from .sdms import write_sdms

__version__ = "0.1.0"
