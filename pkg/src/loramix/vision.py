"""Vision path: dynamic multi-crop planning, a toy patch encoder and the vision projector."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from . import numerics as nx
from .errors import ConfigurationError, DimensionError
from .layers import MLPProjector, init_linear, init_norm, init_self_attention, linear, norm, self_attention
from .numerics import SplitMix64, Tensor


@dataclass(frozen=True)
class CropPlan:
    rows: int
    cols: int
    resize_h: int
    resize_w: int
    fallback_used: bool

    @property
    def n_crops(self) -> int:
        return self.rows * self.cols


def fallback_aspect_grid(H: int, W: int, max_crops: int) -> tuple:
    """Grid (rows, cols) with rows*cols <= max_crops whose rows/cols is closest to H/W.

    Ties go to the larger crop count, then to more rows. Distances are compared
    exactly as rationals.
    """
    best_key, best = None, None
    for rows in range(1, max_crops + 1):
        for cols in range(1, max_crops // rows + 1):
            distance = Fraction(abs(rows * W - cols * H), cols * W)
            key = (distance, -rows * cols, -rows)
            if best_key is None or key < best_key:
                best_key, best = key, (rows, cols)
    return best


def plan_crops(H: int, W: int, C: int, max_crops: int) -> CropPlan:
    if min(H, W, C) < 1 or max_crops < 1:
        raise ValueError("plan_crops needs H, W, C >= 1 and max_crops >= 1")
    rows, cols = math.ceil(H / C), math.ceil(W / C)
    if rows * cols <= max_crops:
        return CropPlan(rows, cols, rows * C, cols * C, False)
    rows, cols = fallback_aspect_grid(H, W, max_crops)
    return CropPlan(rows, cols, rows * C, cols * C, True)


def load_image(path) -> np.ndarray:
    """Decode PNG/PPM (anything PIL reads) to an H x W x 3 uint8 array."""
    with Image.open(Path(path)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image
    img = Image.fromarray(np.asarray(image, dtype=np.uint8))
    return np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.uint8)


def split_crops(image: np.ndarray, plan: CropPlan, C: int) -> list:
    """Resize per ``plan`` and cut into C x C crops in row-major order, scaled to [0, 1]."""
    resized = resize_bilinear(image, plan.resize_h, plan.resize_w).astype(np.float64) / 255.0
    return [
        resized[r * C : (r + 1) * C, c * C : (c + 1) * C]
        for r in range(plan.rows)
        for c in range(plan.cols)
    ]


@dataclass(frozen=True)
class VisionEncoderConfig:
    crop_size: int = 448
    patch_size: int = 32
    width: int = 64
    n_heads: int = 4
    max_crops_pretrain: int = 16
    max_crops_sft: int = 36

    def __post_init__(self):
        if self.crop_size % self.patch_size:
            raise ConfigurationError("crop_size must be a multiple of patch_size")
        if self.width % self.n_heads:
            raise ConfigurationError("width must be divisible by n_heads")

    @property
    def n_patches(self) -> int:
        return (self.crop_size // self.patch_size) ** 2


TOY_VISION = VisionEncoderConfig(crop_size=32, patch_size=8, width=32, n_heads=4)


class PatchEncoder:
    """Stand-in image encoder: patch flattening, linear embedding, one attention block."""

    def __init__(self, config: VisionEncoderConfig = TOY_VISION, seed: int = 0):
        self.config = config
        rng = SplitMix64(seed).fork("vision_encoder")
        w = config.width
        p = {}
        init_linear(p, rng, "patch_embed", 3 * config.patch_size**2, w)
        p["pos_embed"] = Tensor(rng.fork("pos").normal((config.n_patches, w), 0.02))
        init_norm(p, "block.ln1", w)
        init_self_attention(p, rng, "block.attn", w)
        init_norm(p, "block.ln2", w)
        init_linear(p, rng, "block.mlp.in", w, 2 * w)
        init_linear(p, rng, "block.mlp.out", 2 * w, w)
        init_norm(p, "final_ln", w)
        self.params = p

    def patchify(self, crop: np.ndarray) -> np.ndarray:
        c, ps = self.config.crop_size, self.config.patch_size
        crop = np.asarray(crop, dtype=np.float64)
        if crop.shape != (c, c, 3):
            raise DimensionError(f"crop must be {c}x{c}x3, got {crop.shape}")
        n = c // ps
        return crop.reshape(n, ps, n, ps, 3).transpose(0, 2, 1, 3, 4).reshape(n * n, ps * ps * 3)

    def encode_patches(self, patches) -> Tensor:
        """Patch vectors [..., n_patches, 3*p*p] to features [..., n_patches, width]."""
        p = self.params
        x = linear(p, "patch_embed", patches) + p["pos_embed"]
        x = x + self_attention(p, "block.attn", norm(p, "block.ln1", x), self.config.n_heads, rotary=False)
        h = nx.gelu(linear(p, "block.mlp.in", norm(p, "block.ln2", x)))
        x = x + linear(p, "block.mlp.out", h)
        return norm(p, "final_ln", x)

    def __call__(self, crop) -> Tensor:
        return self.encode_patches(Tensor(self.patchify(crop)))


def image_patches(image: np.ndarray, encoder: PatchEncoder, max_crops: int) -> np.ndarray:
    """Patch vectors of every crop of ``image``, [n_crops, n_patches, 3*p*p], crops row-major."""
    cfg = encoder.config
    plan = plan_crops(image.shape[0], image.shape[1], cfg.crop_size, max_crops)
    return np.stack([encoder.patchify(c) for c in split_crops(image, plan, cfg.crop_size)])


def image_token_count(H: int, W: int, config: VisionEncoderConfig, max_crops: int) -> int:
    return plan_crops(H, W, config.crop_size, max_crops).n_crops * config.n_patches


class VisionProjector(MLPProjector):
    def __init__(self, width: int, d_model: int, seed: int = 0):
        super().__init__(width, d_model, seed, name="vision_projector")
