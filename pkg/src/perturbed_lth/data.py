"""Datasets for the pruning experiments: MNIST IDX files and Gaussian blobs."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATA_ENV = "PERTURB_LTH_DATA"
LABEL_MAGIC = 0x00000801
IMAGE_MAGIC = 0x00000803

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int64 class labels

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ValueError(f"inconsistent dataset shapes {self.x.shape} / {self.y.shape}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class Split:
    train: Dataset
    test: Dataset


# IDX ------------------------------------------------------------------------


def _read_idx(path, expected_magic: int, kind: str) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IdxFormatError(f"{kind} file {path}: header needs at least 8 bytes, got {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{kind} file {path}: magic expected 0x{expected_magic:08x}, got 0x{magic:08x}"
        )
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{kind} file {path}: dims header expected {head} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    body = int(np.prod(dims))
    if len(raw) - head != body:
        raise IdxFormatError(
            f"{kind} file {path}: data expected {body} bytes for dims {dims}, got {len(raw) - head}"
        )
    return dims, raw[head:]


def mnist_load(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    idims, ibytes = _read_idx(images_path, IMAGE_MAGIC, "image")
    (n_labels,), lbytes = _read_idx(labels_path, LABEL_MAGIC, "label")
    if idims[0] != n_labels:
        raise IdxFormatError(f"count mismatch: {idims[0]} images vs {n_labels} labels")
    x = np.frombuffer(ibytes, dtype=np.uint8).reshape(idims[0], -1).astype(np.float64) / 255.0
    y = np.frombuffer(lbytes, dtype=np.uint8).astype(np.int64)
    if y.size and y.max() > 9:
        raise IdxFormatError(f"label values expected in 0..9, got max {y.max()}")
    return Dataset(x, y)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (used to build test fixtures)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def mnist_split(directory=None, train_size: int = 10_000, test_size: int = 2_000) -> Split:
    """MNIST train/test subsets from ``directory`` or ``$PERTURB_LTH_DATA``."""
    directory = directory or os.environ.get(DATA_ENV)
    if not directory:
        raise FileNotFoundError(f"no MNIST directory given and ${DATA_ENV} is unset")
    d = Path(directory)
    parts = {}
    for name, (img, lab) in MNIST_FILES.items():
        parts[name] = mnist_load(d / img, d / lab)
    return Split(
        parts["train"].subset(slice(0, train_size)), parts["test"].subset(slice(0, test_size))
    )


# synthetic ------------------------------------------------------------------


def synthetic_dataset(
    classes: int,
    dim: int,
    n_per_class: int,
    seed: int = 0,
    separation: float = 4.0,
) -> Dataset:
    """Isotropic unit-variance Gaussian blobs.

    ``separation`` is the margin, in standard deviations, between the
    closest pair of class means and the hyperplane bisecting them, so
    those means sit ``2 * separation`` apart. Rows are shuffled
    deterministically; each class has exactly ``n_per_class`` samples.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if dim < 1 or n_per_class < 1:
        raise ValueError("dim and n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    gaps = np.linalg.norm(dirs[:, None] - dirs[None], axis=-1)
    closest = gaps[~np.eye(classes, dtype=bool)].min()
    means = dirs * (2.0 * separation / max(closest, 1e-12))
    y = np.repeat(np.arange(classes), n_per_class)
    x = means[y] + rng.standard_normal((y.size, dim))
    order = rng.permutation(y.size)
    return Dataset(x[order], y[order].astype(np.int64))


def train_test_split(data: Dataset, test_fraction: float = 0.25, seed: int = 0) -> Split:
    if not (0 < test_fraction < 1):
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(data))
    cut = int(round(len(data) * (1 - test_fraction)))
    return Split(data.subset(order[:cut]), data.subset(order[cut:]))
