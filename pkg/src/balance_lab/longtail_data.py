"""Synthetic long-tailed Gaussian mixture datasets.

Classes are isotropic Gaussians whose means sit on a circle.  Class sizes
decay geometrically from ``n_max`` for class 0 down to ``n_max / rho`` for
the last class, so ``rho`` is the head-to-tail imbalance ratio.

Sampling is stream-separated: the train, test and annotator streams use
distinct rng seeds derived from ``(stream, seed)``, so enlarging one
dataset never perturbs another.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRAIN_STREAM = 0
TEST_STREAM = 1
ANNOTATOR_STREAM = 2


@dataclass(frozen=True)
class LongTailSpec:
    """Parameters of a long-tailed mixture dataset."""

    n_classes: int
    rho: float
    n_max: int
    dim: int = 2
    radius: float = 4.0
    std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.rho < 1.0:
            raise ValueError(f"rho must be >= 1, got {self.rho}")
        if self.n_max < self.rho:
            raise ValueError(
                f"n_max={self.n_max} < rho={self.rho}: tail class would round to zero"
            )
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.std <= 0.0:
            raise ValueError(f"std must be positive, got {self.std}")

    def class_means(self):
        """Means on a circle in the first two coordinates, zero elsewhere."""
        k = np.arange(self.n_classes)
        theta = 2.0 * np.pi * k / self.n_classes
        means = np.zeros((self.n_classes, self.dim))
        means[:, 0] = self.radius * np.cos(theta)
        means[:, 1] = self.radius * np.sin(theta)
        return means

    def class_counts(self):
        """Per-class sample counts, geometric decay, round half up, >= 1."""
        k = np.arange(self.n_classes)
        raw = self.n_max * self.rho ** (-k / (self.n_classes - 1))
        counts = np.floor(raw + 0.5).astype(np.int64)
        return np.maximum(counts, 1)


@dataclass
class LabeledDataset:
    """Samples with integer class labels."""

    samples: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-d, got shape {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.samples.shape[0]} samples"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.n_classes
        ):
            raise ValueError("labels out of range")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def _sample_classes(spec, counts, stream):
    rng = np.random.default_rng([stream, spec.seed])
    means = spec.class_means()
    parts = []
    labels = []
    for k in range(spec.n_classes):
        n_k = int(counts[k])
        parts.append(means[k] + spec.std * rng.standard_normal((n_k, spec.dim)))
        labels.append(np.full(n_k, k, dtype=np.int64))
    return LabeledDataset(np.vstack(parts), np.concatenate(labels), spec.n_classes)


def make_longtail(spec):
    """Draw the long-tailed training set for ``spec`` (grouped by class)."""
    return _sample_classes(spec, spec.class_counts(), TRAIN_STREAM)


def make_balanced(spec, per_class, stream=TEST_STREAM):
    """Draw a balanced set with ``per_class`` samples of every class."""
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    counts = np.full(spec.n_classes, int(per_class), dtype=np.int64)
    return _sample_classes(spec, counts, stream)


def _meta_path(csv_path):
    return Path(csv_path).with_suffix(".meta")


def save_dataset(dataset, csv_path, spec=None):
    """Write ``dataset`` as CSV plus a key=value metadata sidecar."""
    csv_path = Path(csv_path)
    dim = dataset.dim
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(dim)] + ["label"])
        for row, label in zip(dataset.samples, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    meta = {
        "n_classes": dataset.n_classes,
        "dim": dim,
        "counts": ",".join(str(c) for c in dataset.counts()),
    }
    if spec is not None:
        meta.update(
            rho=spec.rho, n_max=spec.n_max, radius=spec.radius,
            std=spec.std, seed=spec.seed,
        )
    with open(_meta_path(csv_path), "w") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value}\n")


def load_dataset(csv_path):
    """Read a dataset written by :func:`save_dataset`.

    Returns ``(dataset, meta)`` where ``meta`` is the sidecar as a string
    dict (empty if the sidecar is missing).
    """
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{csv_path}: expected trailing 'label' column")
        dim = len(header) - 1
        samples = []
        labels = []
        for row in reader:
            if len(row) != dim + 1:
                raise ValueError(f"{csv_path}: row of width {len(row)}, expected {dim + 1}")
            samples.append([float(v) for v in row[:dim]])
            labels.append(int(row[dim]))
    meta = {}
    meta_path = _meta_path(csv_path)
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    n_classes = int(meta.get("n_classes", max(labels) + 1 if labels else 2))
    samples = np.asarray(samples) if samples else np.empty((0, dim))
    return LabeledDataset(samples, np.asarray(labels, dtype=np.int64), n_classes), meta
