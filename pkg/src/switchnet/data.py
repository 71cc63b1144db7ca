"""Datasets: IDX (MNIST) reader/writer and deterministic Gaussian blobs."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import BadMagic, CountMismatch, DataEmpty, TruncatedFile

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class DatasetHandle:
    """Train/test split with flattened float64 features in [0, 1]."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    image_shape: tuple[int, ...]
    num_classes: int
    normalization: str = "scale-0-1"

    def __post_init__(self):
        for name in ("y_train", "y_test"):
            y = getattr(self, name)
            if y.size and y.max() >= self.num_classes:
                raise ValueError(f"{name} holds labels >= num_classes={self.num_classes}")

    @property
    def n_train(self) -> int:
        return len(self.y_train)

    @property
    def n_test(self) -> int:
        return len(self.y_test)

    def require_train(self) -> None:
        if self.n_train == 0:
            raise DataEmpty("dataset has no training samples")

    def subset(self, n_train: int, n_test: int) -> "DatasetHandle":
        return DatasetHandle(
            self.X_train[:n_train], self.y_train[:n_train],
            self.X_test[:n_test], self.y_test[:n_test],
            self.image_shape, self.num_classes, self.normalization,
        )


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> tuple[tuple[int, ...], np.ndarray]:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: file shorter than the magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise TruncatedFile(f"{path}: expected {expected} payload bytes, found {len(raw) - header}")
    payload = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header)
    return dims, payload.reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair; pixels are scaled to [0, 1].

    Returns ``(images, labels)`` with images shaped (n, rows, cols) float64.
    """
    _, images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, images_path)
    _, labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as IDX files."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise TypeError("IDX writer expects uint8 arrays")
    if images.ndim != 3 or labels.ndim != 1:
        raise ValueError("images must be (n, rows, cols), labels (n,)")
    Path(images_path).write_bytes(struct.pack(">4I", IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_mnist(directory) -> DatasetHandle:
    directory = Path(directory)
    xtr, ytr = load_idx(directory / MNIST_FILES["train_images"], directory / MNIST_FILES["train_labels"])
    xte, yte = load_idx(directory / MNIST_FILES["test_images"], directory / MNIST_FILES["test_labels"])
    shape = xtr.shape[1:]
    return DatasetHandle(xtr.reshape(len(xtr), -1), ytr, xte.reshape(len(xte), -1), yte, shape, 10)


def mnist_subset(data: DatasetHandle, n: int, seed: int = 0, train_fraction: float = 0.8) -> DatasetHandle:
    """``n`` training images drawn without replacement, split train/test."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.n_train, size=n, replace=False)
    n_tr = int(round(train_fraction * n))
    tr, te = idx[:n_tr], idx[n_tr:]
    return DatasetHandle(
        data.X_train[tr], data.y_train[tr], data.X_train[te], data.y_train[te],
        data.image_shape, data.num_classes, data.normalization,
    )


def synth_blobs(num_classes: int = 10, per_class: int = 50, dims: int = 20, seed: int = 0,
                spread: float = 0.05) -> DatasetHandle:
    """Gaussian class blobs in [0, 1]^dims, 80/20 train/test split.

    Values are quantized to multiples of 1/255 so the set survives an IDX
    round trip exactly.
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(num_classes, dims))
    labels = np.repeat(np.arange(num_classes), per_class)
    X = centers[labels] + spread * rng.normal(size=(len(labels), dims))
    X = np.round(np.clip(X, 0.0, 1.0) * 255.0) / 255.0
    order = rng.permutation(len(labels))
    n_train = int(round(0.8 * len(labels)))
    tr, te = order[:n_train], order[n_train:]
    return DatasetHandle(X[tr], labels[tr], X[te], labels[te], (dims,), num_classes)


def dataset_to_idx(data: DatasetHandle, directory) -> dict[str, Path]:
    """Write a dataset as the four MNIST-named IDX files under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / v for k, v in MNIST_FILES.items()}
    rows, cols = (1, data.image_shape[0]) if len(data.image_shape) == 1 else data.image_shape

    def to_u8(X):
        return np.round(X * 255.0).astype(np.uint8).reshape(len(X), rows, cols)

    write_idx(to_u8(data.X_train), data.y_train.astype(np.uint8), paths["train_images"], paths["train_labels"])
    write_idx(to_u8(data.X_test), data.y_test.astype(np.uint8), paths["test_images"], paths["test_labels"])
    return paths


def load_idx_dataset(directory, num_classes: int | None = None) -> DatasetHandle:
    """Load an MNIST-named IDX directory; 1-row images are treated as vectors."""
    directory = Path(directory)
    xtr, ytr = load_idx(directory / MNIST_FILES["train_images"], directory / MNIST_FILES["train_labels"])
    xte, yte = load_idx(directory / MNIST_FILES["test_images"], directory / MNIST_FILES["test_labels"])
    shape = xtr.shape[1:] if xtr.shape[1] > 1 else (xtr.shape[2],)
    k = num_classes or int(max(ytr.max(initial=0), yte.max(initial=0)) + 1)
    return DatasetHandle(xtr.reshape(len(xtr), -1), ytr, xte.reshape(len(xte), -1), yte, tuple(shape), k)
