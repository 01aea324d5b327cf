"""Seeded synthetic classification data and its CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATA_KINDS = ("blobs", "moons")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("need exactly one label per feature row")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], self.classes)


def _moons(n: int, classes: int, noise: float, rng) -> tuple[np.ndarray, np.ndarray]:
    # interleaved half circles; extra classes get further arcs shifted right
    labels = np.arange(n) % classes
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(labels % 2 == 0, np.cos(t), 1.0 - np.cos(t)) + 1.0 * (labels // 2)
    y = np.where(labels % 2 == 0, np.sin(t), 0.5 - np.sin(t))
    feats = np.column_stack([x, y]) + noise * rng.standard_normal((n, 2))
    return feats, labels


def _blobs(n: int, classes: int, noise: float, rng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.arange(n) % classes
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    feats = centers[labels] + noise * rng.standard_normal((n, 2))
    return feats, labels


def generate(
    kind: str, n: int, classes: int = 2, noise: float = 0.1, seed: int = 0, rotation: float = 0.0
) -> Dataset:
    """Synthetic 2-D classification set; ``rotation`` (degrees) turns the point cloud about the origin."""
    if kind not in DATA_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {DATA_KINDS}")
    if classes < 2:
        raise ValueError("need at least two classes")
    if n < classes * 10:
        raise ValueError(f"n={n} is too small for {classes} classes (need >= {classes * 10})")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    feats, labels = (_moons if kind == "moons" else _blobs)(n, classes, noise, rng)
    if rotation:
        theta = np.deg2rad(rotation)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        feats = feats @ rot.T
    order = rng.permutation(n)
    return Dataset(feats[order], labels[order], classes)


def train_test_split(data: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_test = max(1, int(round(test_fraction * len(data))))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


def to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i}" for i in range(data.input_dim)] + ["label"])
    for row, label in zip(data.features, data.labels):
        writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def save_csv(data: Dataset, path) -> None:
    Path(path).write_text(to_csv(data))


def load_csv(path, classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    feats = np.array([[float(v) for v in r[:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows])
    return Dataset(feats, labels, classes if classes is not None else int(labels.max()) + 1)
