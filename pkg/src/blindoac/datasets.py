"""Dataset ingestion and partitioning for the federated task.

Two self-contained tasks (no downloads): the 8x8 scikit-learn digits and
a synthetic Gaussian-blob classifier.  IDX-format readers are provided
for MNIST-compatible files on disk.
"""

import struct
from dataclasses import dataclass

import numpy as np

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float
    labels: np.ndarray    # (n,) int
    n_classes: int

    def __post_init__(self):
        if len(self.features) == 0:
            raise ValueError("dataset must be non-empty")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels out of class range")

    def __len__(self):
        return len(self.features)

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def load_idx_images(path):
    """Read a big-endian IDX image file into a (n, rows*cols) float array in [0,1]."""
    with open(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IDX_MAGIC_IMAGES:
            raise ValueError(f"bad IDX image magic 0x{magic:08x} in {path}")
        data = np.frombuffer(f.read(n * rows * cols), dtype=np.uint8)
    return data.reshape(n, rows * cols).astype(float) / 255.0


def load_idx_labels(path):
    with open(path, "rb") as f:
        magic, n = struct.unpack(">II", f.read(8))
        if magic != IDX_MAGIC_LABELS:
            raise ValueError(f"bad IDX label magic 0x{magic:08x} in {path}")
        labels = np.frombuffer(f.read(n), dtype=np.uint8)
    return labels.astype(np.int64)


def load_idx_dataset(images_path, labels_path, n_classes=10):
    X = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if len(X) != len(y):
        raise ValueError("image/label count mismatch")
    return Dataset(X, y, n_classes)


def digits_task(test_fraction=0.25, seed=0):
    """8x8 digits task; features scaled to [0, 1]. Returns (train, test)."""
    from sklearn.datasets import load_digits

    X, y = load_digits(return_X_y=True)
    X = X / 16.0
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(X))
    n_test = int(len(X) * test_fraction)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    return (
        Dataset(X[train_idx], y[train_idx], 10),
        Dataset(X[test_idx], y[test_idx], 10),
    )


def blobs_task(n_classes=10, dim=8, n_train=1000, n_test=500, spread=0.35, seed=0):
    """Synthetic Gaussian-blob classification; class means on the unit sphere."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n):
        y = rng.integers(0, n_classes, size=n)
        X = means[y] + spread * rng.normal(size=(n, dim))
        return Dataset(X, y, n_classes)

    return draw(n_train), draw(n_test)


def partition_iid(dataset, K, seed):
    """Disjoint uniform split of a dataset across K devices."""
    if K < 1 or K > len(dataset):
        raise ValueError(f"cannot split {len(dataset)} samples across {K} devices")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    parts = [dataset.subset(np.sort(chunk)) for chunk in np.array_split(perm, K)]
    validate_partition(parts, len(dataset))
    return parts


def validate_partition(parts, total):
    sizes = sum(len(p) for p in parts)
    if sizes != total:
        raise ValueError(f"partition covers {sizes} of {total} samples")
    if any(len(p) == 0 for p in parts):
        raise ValueError("every device needs at least one sample")
