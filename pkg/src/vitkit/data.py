"""Dataset ingestion, deterministic stratified splitting, and batch loading.

Layout convention: ``<root>/<class_name>/*.{png,jpg}``. Split manifests are
text files: a header line with the comma-separated label vocabulary, then one
``relative_path<TAB>label_index`` line per entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from vitkit.augment import AugmentPolicy, rand_augment
from vitkit.tensor import Tensor
from vitkit.util import rng_for

logger = logging.getLogger(__name__)

IMAGE_EXTS = {".png", ".jpg", ".jpeg"}


class DatasetError(Exception):
    """Ingestion or split failure."""


@dataclass
class DatasetManifest:
    root: Path
    labels: list[str]
    entries: list[tuple[str, int]]  # (relative path, label index), sorted by path
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def paths(self) -> set[str]:
        return {p for p, _ in self.entries}


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (Fraction(8, 10), Fraction(1, 10), Fraction(1, 10))
    seed: int = 0

    def __post_init__(self):
        fracs = tuple(Fraction(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fracs)
        if len(fracs) != 3 or any(f < 0 for f in fracs):
            raise ValueError(f"need three non-negative fractions, got {fracs}")
        if sum(fracs) != 1:
            raise ValueError(f"fractions must sum to exactly 1, got {fracs}")


def scan_dataset(root) -> DatasetManifest:
    """Build a manifest from one subdirectory per class; vocabulary is sorted names."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DatasetError(f"dataset root {root} contains no class directories")
    labels = [d.name for d in class_dirs]
    entries: list[tuple[str, int]] = []
    skipped = 0
    for idx, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.is_file())
        kept = [p for p in files if p.suffix.lower() in IMAGE_EXTS]
        skipped += len(files) - len(kept)
        if not kept:
            raise DatasetError(f"class directory {d} contains no images")
        entries.extend((str(p.relative_to(root)), idx) for p in kept)
    if skipped:
        logger.warning("scan_dataset skipped %d non-image files under %s", skipped, root)
    entries.sort(key=lambda e: e[0])
    return DatasetManifest(root=root, labels=labels, entries=entries, skipped=skipped)


def split(manifest: DatasetManifest, spec: SplitSpec):
    """Stratified (train, val, test) partition; per class floor/floor/remainder."""
    f_train, f_val, _ = spec.fractions
    by_class: dict[int, list[tuple[str, int]]] = {}
    for entry in manifest.entries:
        by_class.setdefault(entry[1], []).append(entry)
    rng = rng_for(spec.seed, 0x53504C)
    parts: tuple[list, list, list] = ([], [], [])
    for label in range(len(manifest.labels)):
        group = by_class.get(label, [])
        c = len(group)
        if c < 3:
            raise DatasetError(
                f"class {manifest.labels[label]!r} has only {c} entries; need at least 3"
            )
        perm = rng.permutation(c)
        n_train = int(f_train * c)  # Fraction * int floor via int()
        n_val = int(f_val * c)
        for pos, j in enumerate(perm):
            bucket = 0 if pos < n_train else (1 if pos < n_train + n_val else 2)
            parts[bucket].append(group[j])
    out = []
    for part in parts:
        part.sort(key=lambda e: e[0])
        out.append(DatasetManifest(root=manifest.root, labels=list(manifest.labels),
                                   entries=part))
    return tuple(out)


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [",".join(manifest.labels)]
    lines += [f"{p}\t{label}" for p, label in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, root=None) -> DatasetManifest:
    path = Path(path)
    text = path.read_text().splitlines()
    if not text:
        raise DatasetError(f"manifest {path} is empty")
    labels = text[0].split(",")
    entries = []
    for line in text[1:]:
        if not line:
            continue
        rel, _, idx = line.partition("\t")
        entries.append((rel, int(idx)))
    return DatasetManifest(root=Path(root) if root else path.parent,
                           labels=labels, entries=entries)


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def load_batch(manifest: DatasetManifest, indices: Sequence[int], resolution: int,
               augment: Optional[AugmentPolicy] = None, draw_start: int = 0):
    """Decode, optionally augment, resize, and normalize a batch.

    Returns a (B, R, R, 3) float Tensor normalized with mean 0.5 / std 0.5,
    plus the label list. Sample j uses augmentation draw index draw_start + j.
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    images = []
    labels = []
    for j, i in enumerate(indices):
        rel, label = manifest.entries[i]
        arr = _load_image(manifest.root / rel)
        if augment is not None and augment.n_ops > 0:
            arr = rand_augment(arr, augment, draw_start + j)
        pil = Image.fromarray(arr)
        if pil.size != (resolution, resolution):
            pil = pil.resize((resolution, resolution), Image.BILINEAR)
        x = np.asarray(pil, dtype=np.float64) / 255.0
        images.append((x - 0.5) / 0.5)
        labels.append(label)
    return Tensor(np.stack(images)), labels
