"""Named-tensor archive checkpoints and pretrained-weight import.

Binary layout (all integers little-endian):

    magic   8 bytes  b"VITW0001"
    count   u64      number of entries
    entry   u32 name length, UTF-8 name, u32 rank, rank * u64 extents,
            float32 LE payload (product of extents values)

Writes are atomic (temp file + rename) and the format round-trips
byte-exactly, so it is the interchange surface with external converters.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vitkit.util import bilinear_resize
from vitkit.vit import ViTModel

MAGIC = b"VITW0001"


class FormatError(Exception):
    """Malformed archive file."""


class WeightImportError(Exception):
    """Strict import found unmatched or mismatched tensors."""


@dataclass
class NamedTensorArchive:
    entries: list[tuple[str, np.ndarray]] = field(default_factory=list)  # float32 payloads
    format_version: int = 1

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def get(self, name: str) -> np.ndarray:
        for n, arr in self.entries:
            if n == name:
                return arr
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.entries)


@dataclass
class ImportReport:
    imported: list[str] = field(default_factory=list)
    skipped_head: list[str] = field(default_factory=list)
    interpolated: list[str] = field(default_factory=list)
    mismatched: list[str] = field(default_factory=list)
    unmatched_archive: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return (f"imported {len(self.imported)}, head skipped {len(self.skipped_head)}, "
                f"interpolated {len(self.interpolated)}, mismatched {len(self.mismatched)}, "
                f"unmatched archive tensors {len(self.unmatched_archive)}")


def save_archive(archive: NamedTensorArchive, path) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<Q", len(archive.entries))
    for name, arr in archive.entries:
        raw = name.encode()
        arr = np.asarray(arr, dtype="<f4")
        blob += struct.pack("<I", len(raw))
        blob += raw
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.tobytes()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: ViTModel, path) -> None:
    """Persist model parameters (64 -> 32 bit) in declaration order."""
    archive = NamedTensorArchive(
        entries=[(name, p.tensor.data.astype("<f4")) for name, p in model.params.items()]
    )
    save_archive(archive, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(
                f"archive truncated: need {n} bytes at offset {self.offset}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out


def load(path) -> NamedTensorArchive:
    blob = Path(path).read_bytes()
    reader = _Reader(blob)
    if reader.take(8) != MAGIC:
        raise FormatError(f"bad magic at offset 0 in {path}")
    (count,) = struct.unpack("<Q", reader.take(8))
    entries = []
    seen = set()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", reader.take(4))
        name = reader.take(name_len).decode()
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r} at offset {reader.offset}")
        seen.add(name)
        (rank,) = struct.unpack("<I", reader.take(4))
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(shape)
        entries.append((name, payload))
    if reader.offset != len(blob):
        raise FormatError(f"trailing {len(blob) - reader.offset} bytes at offset {reader.offset}")
    return NamedTensorArchive(entries=entries)


def interpolate_pos_embedding(pos: np.ndarray, new_seq_len: int) -> np.ndarray:
    """Bilinear grid resample of patch position embeddings; class token untouched."""
    old_n = pos.shape[0] - 1
    new_n = new_seq_len - 1
    old_side = math.isqrt(old_n)
    new_side = math.isqrt(new_n)
    if old_side * old_side != old_n or new_side * new_side != new_n:
        raise ValueError(f"cannot interpolate {old_n} -> {new_n} patch embeddings")
    d = pos.shape[1]
    grid = pos[1:].reshape(old_side, old_side, d).astype(np.float64)
    resized = bilinear_resize(grid, new_side, new_side).reshape(new_n, d)
    return np.concatenate([pos[:1].astype(np.float64), resized], axis=0)


def import_pretrained(archive: NamedTensorArchive, model: ViTModel,
                      strict: bool = False) -> ImportReport:
    """Copy matching tensors into the model.

    Position embeddings with a different sequence length are grid-interpolated;
    head tensors with a different class count are skipped (fine-tune path).
    Strict mode raises on any other mismatch, listing all of them.
    """
    report = ImportReport()
    model_names = set(model.params.keys())
    for name, arr in archive.entries:
        if name not in model_names:
            report.unmatched_archive.append(name)
            continue
        target = model.param(name)
        if arr.shape == target.data.shape:
            target.data = arr.astype(np.float64)
            target.grad = None
            report.imported.append(name)
        elif name == "embed.pos" and arr.shape[1:] == target.data.shape[1:]:
            target.data = interpolate_pos_embedding(arr, target.data.shape[0])
            target.grad = None
            report.interpolated.append(name)
        elif name.startswith("head."):
            report.skipped_head.append(name)
        else:
            report.mismatched.append(
                f"{name}: archive {arr.shape} vs model {target.data.shape}"
            )
    missing = model_names - set(archive.names())
    if strict:
        problems = report.mismatched + [f"missing from archive: {n}" for n in sorted(missing)
                                        if not n.startswith("head.")]
        problems += [f"not in model: {n}" for n in report.unmatched_archive]
        if problems:
            raise WeightImportError("; ".join(problems))
    return report
