"""Synthetic datasets and file-backed dataset loading."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .rng import SeededRng
from .tensor_core import read_mbgt, write_mbgt


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int
    image_shape: tuple[int, int, int] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        a = Dataset(self.features[:n_first], self.labels[:n_first], self.classes, self.image_shape)
        b = Dataset(self.features[n_first:], self.labels[n_first:], self.classes, self.image_shape)
        return a, b


def validate(features, labels, classes: int | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {x.shape}")
    if y.ndim != 1 or len(y) != len(x):
        raise DataError("need exactly one label per feature row")
    if len(y) and not np.all(np.equal(np.mod(y, 1), 0)):
        raise DataError("labels must be integers")
    y = y.astype(np.int64)
    if classes is None:
        classes = int(y.max()) + 1 if len(y) else 0
    if len(y) and (y.min() < 0 or y.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes})")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain NaN or Inf")
    return x, y, classes


def synthetic_blobs(
    classes: int, dim: int, spread: float, n: int, rng: SeededRng, center_scale: float = 1.0
) -> Dataset:
    """Isotropic Gaussian clusters; class centers are N(0, center_scale^2) per coordinate.

    Labels cycle through the classes and rows are then shuffled.
    """
    centers = rng.normal((classes, dim), center_scale)
    labels = np.arange(n) % classes
    x = centers[labels] + rng.normal((n, dim), spread)
    order = rng.permutation(n)
    return Dataset(x[order], labels[order].astype(np.int64), classes)


def two_moons(n: int, noise: float, rng: SeededRng) -> Dataset:
    labels = np.arange(n) % 2
    t = rng.uniform(n) * np.pi
    x = np.where(labels[:, None] == 0,
                 np.stack([np.cos(t), np.sin(t)], axis=1),
                 np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1))
    x = x + rng.normal((n, 2), noise)
    return Dataset(x, labels.astype(np.int64), 2)


def gaussian_ring(modes: int, n: int, rng: SeededRng, radius: float = 2.0, std: float = 0.05) -> Dataset:
    """Points around ``modes`` Gaussians evenly spaced on a circle; label = mode."""
    labels = rng.integers(modes, n)
    angle = 2.0 * np.pi * labels / modes
    centers = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return Dataset(centers + rng.normal((n, 2), std), labels, modes)


def write_csv(path, features: np.ndarray, labels: np.ndarray) -> None:
    """Header ``f0,...,f{D-1},label``; floats written with ``repr`` so they round-trip."""
    x, y, _ = validate(features, labels)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path, classes: int | None = None) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise DataError(f"{path}: header must end with 'label'")
        expected = [f"f{i}" for i in range(len(header) - 1)]
        if header[:-1] != expected:
            raise DataError(f"{path}: feature columns must be named f0..f{len(header) - 2}")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    x = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    x, y, classes = validate(x, np.array(labels, dtype=np.int64), classes)
    return Dataset(x, y, classes)


def write_mbgt_dataset(features_path, labels_path, features, labels) -> None:
    write_mbgt(features_path, features)
    write_mbgt(labels_path, np.asarray(labels, dtype=np.float64))


def read_mbgt_dataset(features_path, labels_path, classes: int | None = None) -> Dataset:
    x = read_mbgt(features_path).astype(np.float64)
    y = read_mbgt(labels_path)
    if x.ndim != 2:
        x = x.reshape(len(x), -1)
    x, y, classes = validate(x, y, classes)
    return Dataset(x, y, classes)


@dataclass(frozen=True)
class DatasetSource:
    """Where a dataset comes from; ``kind`` selects which fields are used."""

    kind: str
    n: int = 0
    classes: int = 2
    dim: int = 2
    spread: float = 1.0
    center_scale: float = 1.0
    noise: float = 0.1
    modes: int = 8
    radius: float = 2.0
    std: float = 0.05
    path: str = ""
    labels_path: str = ""
    image_shape: tuple[int, int, int] | None = None


def load_dataset(source: DatasetSource, rng: SeededRng) -> Dataset:
    if source.kind == "blobs":
        ds = synthetic_blobs(source.classes, source.dim, source.spread, source.n, rng, source.center_scale)
    elif source.kind == "moons":
        ds = two_moons(source.n, source.noise, rng)
    elif source.kind == "ring":
        ds = gaussian_ring(source.modes, source.n, rng, source.radius, source.std)
    elif source.kind == "csv":
        ds = read_csv(Path(source.path), source.classes or None)
    elif source.kind == "mbgt":
        ds = read_mbgt_dataset(Path(source.path), Path(source.labels_path), source.classes or None)
    else:
        raise ParameterError(f"unknown dataset source {source.kind!r}")
    if source.image_shape is not None:
        if int(np.prod(source.image_shape)) != ds.features.shape[1]:
            raise DataError(f"image_shape {source.image_shape} does not match {ds.features.shape[1]} features")
        ds.image_shape = tuple(source.image_shape)
    return ds
