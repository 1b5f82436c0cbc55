"""RandAugment: n uniformly sampled operations applied at a shared magnitude.

Images are uint8 (H, W, 3) arrays. Operation selection uses a counter-based
generator keyed by (seed, draw_index), so augmentation is reproducible under
any data-loading order. Magnitude maps linearly onto each operation's range;
the table lives in the README.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from vitkit.util import rng_for

ImageBuffer = np.ndarray  # uint8, (H, W, 3)

GRAY_FILL = (128, 128, 128)

CATALOG = (
    "identity",
    "auto-contrast",
    "equalize",
    "rotate",
    "solarize",
    "color",
    "posterize",
    "contrast",
    "brightness",
    "sharpness",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
)


@dataclass(frozen=True)
class AugmentPolicy:
    n_ops: int = 2
    magnitude: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.n_ops < 0:
            raise ValueError(f"n_ops must be non-negative, got {self.n_ops}")
        if not 0 <= self.magnitude <= 10:
            raise ValueError(f"magnitude must be in [0, 10], got {self.magnitude}")


def catalog() -> tuple:
    return CATALOG


def _to_pil(img: ImageBuffer) -> Image.Image:
    return Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8))


def _affine(img: ImageBuffer, matrix) -> ImageBuffer:
    pil = _to_pil(img)
    out = pil.transform(pil.size, Image.AFFINE, matrix,
                        resample=Image.BILINEAR, fillcolor=GRAY_FILL)
    return np.asarray(out)


def _enhance(img: ImageBuffer, enhancer_cls, magnitude: int) -> ImageBuffer:
    factor = 1.0 + 0.9 * magnitude / 10.0
    return np.asarray(enhancer_cls(_to_pil(img)).enhance(factor))


def apply_op(img: ImageBuffer, op: str, magnitude: int) -> ImageBuffer:
    """Apply one catalog operation; returns a new image of identical dimensions."""
    if op not in CATALOG:
        raise ValueError(f"unknown augmentation op {op!r}")
    if not 0 <= magnitude <= 10:
        raise ValueError(f"magnitude must be in [0, 10], got {magnitude}")

    if op == "identity" or (magnitude == 0 and op in
                            ("rotate", "shear-x", "shear-y", "translate-x", "translate-y")):
        return img.copy()
    if op == "auto-contrast":
        return np.asarray(ImageOps.autocontrast(_to_pil(img)))
    if op == "equalize":
        return np.asarray(ImageOps.equalize(_to_pil(img)))
    if op == "rotate":
        degrees = 30.0 * magnitude / 10.0
        out = _to_pil(img).rotate(degrees, resample=Image.BILINEAR, fillcolor=GRAY_FILL)
        return np.asarray(out)
    if op == "solarize":
        # Threshold stays >= 6, so a black image is never inverted.
        return np.asarray(ImageOps.solarize(_to_pil(img), threshold=256 - 25 * magnitude))
    if op == "color":
        return _enhance(img, ImageEnhance.Color, magnitude)
    if op == "posterize":
        bits = 8 - (4 * magnitude) // 10
        return np.asarray(ImageOps.posterize(_to_pil(img), bits))
    if op == "contrast":
        return _enhance(img, ImageEnhance.Contrast, magnitude)
    if op == "brightness":
        return _enhance(img, ImageEnhance.Brightness, magnitude)
    if op == "sharpness":
        return _enhance(img, ImageEnhance.Sharpness, magnitude)

    h, w = img.shape[:2]
    if op == "shear-x":
        return _affine(img, (1.0, 0.3 * magnitude / 10.0, 0.0, 0.0, 1.0, 0.0))
    if op == "shear-y":
        return _affine(img, (1.0, 0.0, 0.0, 0.3 * magnitude / 10.0, 1.0, 0.0))
    if op == "translate-x":
        return _affine(img, (1.0, 0.0, round(0.3 * magnitude / 10.0 * w), 0.0, 1.0, 0.0))
    if op == "translate-y":
        return _affine(img, (1.0, 0.0, 0.0, 0.0, 1.0, round(0.3 * magnitude / 10.0 * h)))
    raise AssertionError(op)


def draw_ops(policy: AugmentPolicy, draw_index: int) -> list[str]:
    """The op sequence for one draw; pure function of (seed, draw_index, n_ops)."""
    rng = rng_for(policy.seed, draw_index)
    picks = rng.integers(0, len(CATALOG), size=policy.n_ops)
    return [CATALOG[i] for i in picks]


def rand_augment(img: ImageBuffer, policy: AugmentPolicy, draw_index: int) -> ImageBuffer:
    out = img
    for op in draw_ops(policy, draw_index):
        out = apply_op(out, op, policy.magnitude)
    return out.copy() if out is img else out
