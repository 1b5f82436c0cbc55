"""Grad-CAM over the final attention sublayer's token activations.

Channel weights are the mean gradient of the class logit over the patch grid;
the map is the ReLU of the weighted activation sum, min-max normalized for
display. The class-token row is excluded before any grid reshaping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vitkit.tensor import Tensor, backward
from vitkit.util import bilinear_resize
from vitkit.vit import ViTModel

# Five-stop blue -> red ramp sampled at t = 0, .25, .5, .75, 1.
RAMP_STOPS = np.array([
    (0, 0, 255),
    (0, 255, 255),
    (0, 255, 0),
    (255, 255, 0),
    (255, 0, 0),
], dtype=np.float64)


@dataclass
class CamTarget:
    activations: np.ndarray  # (N+1, D), class token at row 0
    gradients: np.ndarray    # same shape
    class_index: int

    def __post_init__(self):
        if self.activations.shape != self.gradients.shape:
            raise ValueError(
                f"activation shape {self.activations.shape} differs from "
                f"gradient shape {self.gradients.shape}"
            )


@dataclass
class HeatMap:
    values: np.ndarray  # (h, w) in [0, 1]
    source_resolution: int


def capture_target(model: ViTModel, image, class_index: int) -> CamTarget:
    """One forward pass recording the last attention sublayer, one backward of the logit."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if not 0 <= class_index < model.config.num_classes:
        raise IndexError(
            f"class {class_index} out of range for {model.config.num_classes} classes"
        )
    logits, attn = model.forward(Tensor(arr), capture_attention=True)
    backward(logits[0, class_index])
    target = CamTarget(activations=attn.data[0].copy(),
                       gradients=attn.grad[0].copy(),
                       class_index=class_index)
    for p in model.parameters():
        p.tensor.grad = None
    return target


def _grid_tokens(values: np.ndarray, grid: tuple) -> np.ndarray:
    h, w = grid
    tokens = values[1:]
    if h * w != tokens.shape[0]:
        raise ValueError(
            f"grid {h}x{w} does not cover {tokens.shape[0]} patch tokens"
        )
    return tokens


def channel_weights(target: CamTarget, grid: tuple) -> np.ndarray:
    """Per-channel mean of the class-logit gradient over the patch grid."""
    return _grid_tokens(target.gradients, grid).mean(axis=0)


def cam_map(weights: np.ndarray, activations: np.ndarray, grid: tuple) -> HeatMap:
    """ReLU of the channel-weighted activation sum, min-max normalized to [0, 1]."""
    tokens = _grid_tokens(activations, grid)
    if tokens.shape[1] != len(weights):
        raise ValueError(
            f"{len(weights)} weights for {tokens.shape[1]} channels"
        )
    raw = np.maximum(tokens @ np.asarray(weights, dtype=np.float64), 0.0)
    raw = raw.reshape(grid)
    top = raw.max()
    if top == 0.0:
        values = raw
    elif top == raw.min():
        values = np.ones_like(raw)
    else:
        values = (raw - raw.min()) / (top - raw.min())
    return HeatMap(values=values, source_resolution=grid[0])


def compute_cam(model: ViTModel, image, class_index: int) -> HeatMap:
    """Convenience: capture, weight, and map in one call for a square patch grid."""
    target = capture_target(model, image, class_index)
    n = target.activations.shape[0] - 1
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"patch count {n} is not a perfect square")
    grid = (side, side)
    heat = cam_map(channel_weights(target, grid), target.activations, grid)
    heat.source_resolution = model.config.image_resolution
    return heat


def ramp_color(t: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the fixed 5-stop ramp; returns float RGB."""
    t = np.clip(t, 0.0, 1.0)
    pos = t * (len(RAMP_STOPS) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(RAMP_STOPS) - 1)
    frac = (pos - lo)[..., None]
    return RAMP_STOPS[lo] * (1 - frac) + RAMP_STOPS[hi] * frac


def render_overlay(heat: HeatMap, image: np.ndarray, alpha: float) -> np.ndarray:
    """Alpha-blend the upsampled, color-ramped map onto a uint8 image."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    h, w = image.shape[:2]
    up = bilinear_resize(heat.values, h, w)
    color = ramp_color(up)
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * color
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def write_pgm(heat: HeatMap, path) -> None:
    """Portable graymap (P5) at grid resolution, max value 255."""
    values = np.clip(np.rint(heat.values * 255.0), 0, 255).astype(np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(values.tobytes())


def write_ppm(image: np.ndarray, path) -> None:
    """Portable pixmap (P6), max value 255."""
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
