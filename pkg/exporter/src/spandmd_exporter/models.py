"""Model registry: pretrained DINO checkpoints and a tiny local test ViT.

Every model resolves to a ``VitHandle`` describing where the blocks live
and how tokens are laid out (CLS first, then register tokens, then
patches). Pretrained checkpoints load through torch.hub and therefore
need network access or a warm hub cache; the ``tiny-test`` model is built
locally from a fixed seed and exists so the export pipeline can be
exercised hermetically.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class VitHandle:
    model: nn.Module
    blocks: list
    embed_tokens: callable   # images (B,3,H,W) -> tokens (B, t, d)
    d: int
    n_register: int
    model_id: str

    @property
    def depth(self) -> int:
        return len(self.blocks)


class LayerScale(nn.Module):
    def __init__(self, d, init=1e-2):
        super().__init__()
        self.gamma = nn.Parameter(init * torch.ones(d))

    def forward(self, x):
        return self.gamma * x


class TinyBlock(nn.Module):
    """Pre-norm ViT block with LayerScale on both residual branches."""

    def __init__(self, d, heads, d_ff):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.ls1 = LayerScale(d)
        self.norm2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, d_ff), nn.GELU(), nn.Linear(d_ff, d))
        self.ls2 = LayerScale(d)

    def forward(self, x):
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + self.ls1(attn_out)
        x = x + self.ls2(self.mlp(self.norm2(x)))
        return x


class TinyVit(nn.Module):
    """Seeded DINO-shaped ViT: patch embed, CLS + register tokens, L blocks."""

    def __init__(self, d=32, heads=4, d_ff=64, depth=6, patch=56,
                 img_size=224, n_register=4, seed=0, layerscale=True):
        super().__init__()
        torch.manual_seed(seed)
        self.patch_embed = nn.Conv2d(3, d, kernel_size=patch, stride=patch)
        n_patches = (img_size // patch) ** 2
        self.cls_token = nn.Parameter(torch.randn(1, 1, d) * 0.02)
        self.register_tokens = nn.Parameter(torch.randn(1, n_register, d) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(1, n_patches, d) * 0.02)
        self.blocks = nn.ModuleList(TinyBlock(d, heads, d_ff) for _ in range(depth))
        if not layerscale:
            for blk in self.blocks:
                del blk.ls1, blk.ls2
                blk.ls1 = nn.Identity()
                blk.ls2 = nn.Identity()
        self.n_register = n_register
        self.d = d

    def embed(self, images):
        patches = self.patch_embed(images).flatten(2).transpose(1, 2)
        patches = patches + self.pos_embed
        B = patches.shape[0]
        cls = self.cls_token.expand(B, -1, -1)
        reg = self.register_tokens.expand(B, -1, -1)
        return torch.cat([cls, reg, patches], dim=1)

    def forward(self, images):
        x = self.embed(images)
        for blk in self.blocks:
            x = blk(x)
        return x


def build_tiny_vit(seed: int = 0, layerscale: bool = True, **kwargs) -> VitHandle:
    model = TinyVit(seed=seed, layerscale=layerscale, **kwargs)
    model.eval()
    return VitHandle(
        model=model,
        blocks=list(model.blocks),
        embed_tokens=model.embed,
        d=model.d,
        n_register=model.n_register,
        model_id=f"tiny-test(seed={seed},layerscale={layerscale})",
    )


_DINO_HUB = {
    # model id -> (hub repo, entry point, register token count)
    "dinov2_vitl14_reg": ("facebookresearch/dinov2", "dinov2_vitl14_reg", 4),
    "dinov2_vitg14_reg": ("facebookresearch/dinov2", "dinov2_vitg14_reg", 4),
    "dinov3_vitl16": ("facebookresearch/dinov3", "dinov3_vitl16", 4),
    "dinov3_vith16plus": ("facebookresearch/dinov3", "dinov3_vith16plus", 4),
}


def _load_dino(model_id: str) -> VitHandle:
    repo, entry, n_register = _DINO_HUB[model_id]
    try:
        model = torch.hub.load(repo, entry)
    except Exception as exc:  # hub needs network or a warm cache
        raise RuntimeError(
            f"could not resolve checkpoint {model_id!r} via torch.hub "
            f"({exc}); pretrained exports need network access or a cached hub"
        ) from exc
    model.eval()

    def embed(images):
        return model.prepare_tokens_with_masks(images)

    return VitHandle(
        model=model,
        blocks=list(model.blocks),
        embed_tokens=embed,
        d=model.embed_dim,
        n_register=n_register,
        model_id=model_id,
    )


def resolve_model(model_id: str, seed: int = 0) -> VitHandle:
    if model_id == "tiny-test":
        return build_tiny_vit(seed=seed)
    if model_id == "tiny-test-no-ls":
        return build_tiny_vit(seed=seed, layerscale=False)
    if model_id in _DINO_HUB:
        return _load_dino(model_id)
    raise ValueError(
        f"unknown model {model_id!r}; known: tiny-test, tiny-test-no-ls, "
        + ", ".join(_DINO_HUB)
    )
