"""Seed fan-out and small shared helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, domain: str) -> int:
    """Domain-separated 64-bit sub-seed from a master seed."""
    digest = hashlib.blake2b(f"{domain}:{seed}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(seed: int, *extra: int) -> np.random.Generator:
    """Counter-style generator keyed by (seed, *extra); stable across platforms."""
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), *extra]))


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resampling of a (h, w) or (h, w, c) array."""
    h, w = grid.shape[:2]
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if grid.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = grid[y0][:, x0] * (1 - wx) + grid[y0][:, x1] * wx
    bot = grid[y1][:, x0] * (1 - wx) + grid[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy
