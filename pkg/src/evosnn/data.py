"""Desk-scale datasets: a seeded blob generator and a CSV loader."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


class SchemaError(DatasetError):
    pass


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    train_idx: np.ndarray
    val_idx: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = len(self.labels)
        if self.inputs.ndim != 4 or len(self.inputs) != n:
            raise SchemaError(f"inputs must be (N, C, H, W) with N={n}, got {self.inputs.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise SchemaError(f"labels must lie in [0, {self.num_classes})")
        both = np.concatenate([self.train_idx, self.val_idx])
        if len(both) != n or len(np.unique(both)) != n:
            raise SchemaError("train/validation split must be disjoint and cover the data")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.inputs.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.train_idx, dtype="<i8").tobytes())
        return h.hexdigest()


def split_indices(n: int, seed: int = 0, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def make_blobs(
    n: int = 700,
    size: int = 8,
    seed: int = 7,
    widths: tuple[float, float] = (0.9, 2.0),
    noise: float = 0.05,
    val_fraction: float = 0.2,
) -> Dataset:
    """Two classes of single Gaussian blobs that differ in width.

    Blob centres are jittered around the image centre, so total intensity
    separates the classes linearly while position carries no label signal.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2
    cy = centre + rng.uniform(-1.5, 1.5, size=n)
    cx = centre + rng.uniform(-1.5, 1.5, size=n)
    sig = np.asarray(widths)[labels]
    d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
    img = np.exp(-d2 / (2 * sig[:, None, None] ** 2))
    img += rng.normal(0.0, noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)[:, None]
    tr, va = split_indices(n, seed, val_fraction)
    return Dataset(f"blobs-{n}-{size}-s{seed}", img, labels.astype(np.int64), tr, va, 2)


def load_csv(path, seed: int = 0, val_fraction: float = 0.2, num_classes: int | None = None) -> Dataset:
    """Load ``label,p0,...`` rows; pixels are row-major, square, in [0,1] or [0,255]."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file (line 1)")
    header = rows[0]
    if not header or header[0].strip() != "label":
        raise DatasetError(f"{path}: line 1: header must start with 'label'")
    n_pix = len(header) - 1
    side = int(math.isqrt(n_pix))
    if n_pix == 0 or side * side != n_pix:
        raise DatasetError(f"{path}: line 1: {n_pix} pixel columns is not a square image")
    data = rows[1:]
    if not data:
        raise DatasetError(f"{path}: no data rows after header (line 2)")
    labels = np.empty(len(data), dtype=np.int64)
    pixels = np.empty((len(data), n_pix), dtype=np.float64)
    for r, row in enumerate(data):
        line = r + 2
        if len(row) != n_pix + 1:
            raise DatasetError(f"{path}: line {line}: expected {n_pix + 1} fields, got {len(row)}")
        try:
            labels[r] = int(row[0])
            pixels[r] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DatasetError(f"{path}: line {line}: {exc}") from None
    if not np.isfinite(pixels).all():
        raise DatasetError(f"{path}: non-finite pixel values")
    if labels.min() < 0:
        raise SchemaError(f"{path}: negative label")
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    if labels.max() >= classes:
        bad = int(np.argmax(labels >= classes)) + 2
        raise SchemaError(f"{path}: line {bad}: label {labels[bad - 2]} outside [0, {classes})")
    if pixels.max() > 1.0:
        pixels = pixels / 255.0
    if pixels.min() < 0 or pixels.max() > 1.0:
        raise SchemaError(f"{path}: pixel values outside [0, 255]")
    inputs = pixels.reshape(len(data), 1, side, side).astype(np.float32)
    tr, va = split_indices(len(data), seed, val_fraction)
    return Dataset(path.stem, inputs, labels, tr, va, classes)


def save_csv(ds: Dataset, path) -> None:
    n, c, h, w = ds.inputs.shape
    if c != 1:
        raise DatasetError("CSV export supports single-channel images only")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["label"] + [f"p{i}" for i in range(h * w)])
        for x, y in zip(ds.inputs.reshape(n, -1), ds.labels):
            wr.writerow([int(y)] + [repr(float(v)) for v in x])


def load_dataset(path, format: str = "auto", seed: int = 0, val_fraction: float = 0.2) -> Dataset:
    """Load a dataset by path, or build the generator for ``blobs[:n[:seed]]``."""
    spec = str(path)
    if format == "blobs" or (format == "auto" and spec.startswith("blobs")):
        parts = spec.split(":")
        n = int(parts[1]) if len(parts) > 1 and parts[1] else 700
        s = int(parts[2]) if len(parts) > 2 and parts[2] else 7
        return make_blobs(n=n, seed=s, val_fraction=val_fraction)
    if format not in ("auto", "csv"):
        raise DatasetError(f"unknown dataset format {format!r}")
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"{p}: no such file")
    return load_csv(p, seed=seed, val_fraction=val_fraction)
