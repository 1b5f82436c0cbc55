#!/usr/bin/env python3
"""Generate a small class-colored synthetic dataset tree for smoke runs.

Usage: python scripts/make_synthetic_dataset.py OUT_DIR [--per-class 10] [--size 32]
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image

CLASSES = ["mask", "mask_chin", "mask_mouth_chin", "mask_nose_mouth"]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out", type=Path)
    parser.add_argument("--per-class", type=int, default=10)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    for c, name in enumerate(CLASSES):
        d = args.out / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(args.per_class):
            base = np.zeros((args.size, args.size, 3), np.uint8)
            base[..., c % 3] = 200 if c < 3 else 60
            img = base + rng.integers(0, 56, (args.size, args.size, 3))
            Image.fromarray(img.astype(np.uint8)).save(d / f"img_{i:04d}.png")
    print(f"wrote {len(CLASSES) * args.per_class} images under {args.out}")


if __name__ == "__main__":
    main()
