"""Calibration-image preprocessing: resize, center-crop, normalize.

Each image is resized so its shorter side is 256 pixels, center-cropped to
224, and normalized with the standard per-channel statistics
mean (0.485, 0.456, 0.406) / std (0.229, 0.224, 0.225).
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from PIL import Image

RESIZE = 256
CROP = 224
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def preprocessing_hash() -> str:
    desc = f"resize={RESIZE},crop={CROP},mean={MEAN},std={STD},interp=bicubic"
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def list_images(directory) -> list:
    paths = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise FileNotFoundError(f"no images under {directory}")
    return paths


def image_list_hash(paths) -> str:
    digest = hashlib.sha256()
    for p in paths:
        digest.update(Path(p).name.encode())
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


def preprocess_image(path) -> torch.Tensor:
    img = Image.open(path).convert("RGB")
    w, h = img.size
    scale = RESIZE / min(w, h)
    img = img.resize((round(w * scale), round(h * scale)), Image.BICUBIC)
    w, h = img.size
    left, top = (w - CROP) // 2, (h - CROP) // 2
    img = img.crop((left, top, left + CROP, top + CROP))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.array(MEAN, dtype=np.float32)) / np.array(STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))


def load_image_batch(directory, n: int) -> tuple:
    """First ``n`` images of the directory (sorted), stacked to (n, 3, 224, 224)."""
    paths = list_images(directory)
    if len(paths) < n:
        raise ValueError(f"requested {n} images but found only {len(paths)}")
    paths = paths[:n]
    batch = torch.stack([preprocess_image(p) for p in paths])
    return batch, paths
