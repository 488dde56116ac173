"""Synthetic datasets, CSV ingestion and course/exam batch sampling.

Every generator is a pure function of its arguments; randomness comes from
``numpy.random.default_rng`` seeded explicitly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ikd.errors import ConfigError, DataError, ParseError


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {self.features.shape}")
        if len(self) < 1:
            raise DataError("dataset is empty")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"{self.labels.size} labels for {self.features.shape[0]} rows")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def input_dim(self):
        return self.features.shape[1]

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes, split or self.split, self.name)

    def describe(self):
        return {"name": self.name, "split": self.split, "n": len(self), "d": self.input_dim, "C": self.num_classes}


@dataclass(eq=False)
class Batch:
    indices: np.ndarray
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    @classmethod
    def from_indices(cls, data: Dataset, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= len(data)):
            raise DataError("batch index out of range")
        return cls(indices, data.features[indices], data.labels[indices])

    def __len__(self):
        return self.indices.size


def _simplex_means(num_classes, dim, rng):
    # Regular simplex embedded by a random orthonormal map, pairwise distance 1.
    centred = np.eye(num_classes) - 1.0 / num_classes
    u, s, _ = np.linalg.svd(centred)
    coords = u[:, : num_classes - 1] * s[: num_classes - 1]
    q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes - 1)))
    return coords @ q.T / math.sqrt(2.0)


def gen_blobs(num_classes, dim, n_per_class, spread, label_noise_rate=0.0, seed=0) -> Dataset:
    if num_classes < 2:
        raise ConfigError("blobs need at least 2 classes")
    if dim < num_classes - 1:
        raise ConfigError(f"dim {dim} too small for a {num_classes}-class simplex")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be positive")
    if not spread > 0:
        raise ConfigError("spread must be positive")
    if not 0.0 <= label_noise_rate < 0.5:
        raise ConfigError("label_noise_rate must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    means = _simplex_means(num_classes, dim, rng)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    x = means[labels] + spread * rng.standard_normal((labels.size, dim))
    flip = rng.random(labels.size) < label_noise_rate
    # shift by 1..C-1 so a flipped label is always a different class
    shift = rng.integers(1, num_classes, size=labels.size)
    labels = np.where(flip, (labels + shift) % num_classes, labels)
    order = rng.permutation(labels.size)
    return Dataset(x[order], labels[order], num_classes, "train", f"blobs-C{num_classes}-d{dim}")


def gen_xor(n, noise=0.1, seed=0) -> Dataset:
    """Quadrant centres at (+-1, +-1) with Gaussian jitter; label 1 where the centre signs differ."""
    if n < 1:
        raise ConfigError("n must be positive")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    centres = rng.choice([-1.0, 1.0], size=(n, 2))
    labels = (centres[:, 0] != centres[:, 1]).astype(np.int64)
    x = centres + noise * rng.standard_normal((n, 2))
    return Dataset(x, labels, 2, "train", "xor")


def train_test_split(data: Dataset, test_fraction=0.2, seed=0):
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng([seed, 7])
    order = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    if len(data) - n_test < 1:
        raise DataError("split leaves an empty train set")
    train = data.subset(np.sort(order[n_test:]), "train")
    test = data.subset(np.sort(order[:n_test]), "test") if n_test else None
    return train, test


def load_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("missing header", 1)
    header = rows[0]
    d = len(header) - 1
    expected = [f"f{i}" for i in range(d)] + ["label"]
    if d < 1 or header != expected:
        raise ParseError(f"expected header {','.join(expected) if d >= 1 else 'f0,...,label'}", 1)
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 1:
            raise ParseError(f"expected {d + 1} cells, got {len(row)}", lineno)
        try:
            feats.append([float(c) for c in row[:d]])
        except ValueError:
            raise ParseError("non-numeric feature cell", lineno) from None
        try:
            label = int(row[d])
        except ValueError:
            raise ParseError(f"label {row[d]!r} is not an integer", lineno) from None
        if label < 0:
            raise ParseError(f"negative label {label}", lineno)
        labels.append(label)
    if not labels:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(feats), np.array(labels), max(labels) + 1, "train", str(path))


def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(data.input_dim)] + ["label"])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def steps_per_epoch(n, course_batch):
    return math.ceil(n / course_batch)


def sample_batches(data: Dataset, course_batch, exam_batch, seed, step):
    """Course batch from a per-epoch permutation; exam batch uniform with replacement.

    Both depend only on ``(seed, step)``.
    """
    n = len(data)
    per_epoch = steps_per_epoch(n, course_batch)
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch, 0]).permutation(n)
    course = perm[k * course_batch : (k + 1) * course_batch]
    exam = np.random.default_rng([seed, step, 1]).integers(0, n, size=exam_batch)
    return Batch.from_indices(data, course), Batch.from_indices(data, exam)
