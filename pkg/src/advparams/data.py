"""Datasets: synthetic Gaussian blobs, IDX image files and encryption-set sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    classes: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) == 0:
            raise ValueError("dataset must not be empty")
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.classes == 0:
            self.classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], split or self.split, self.classes)

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.classes).tolist()


@dataclass
class EncryptionSet(Dataset):
    """Sampled subset used to drive encryption; ``indices`` point into the source set."""

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def composition(self) -> list[int]:
        return self.class_counts()


def synth_blobs(classes: int = 10, dim: int = 32, per_class: int = 200, spread: float = 0.5,
                seed: int = 0, center_scale: float = 1.0, offset: float = 0.0,
                shape: tuple | None = None) -> tuple[Dataset, Dataset]:
    """Gaussian clusters, one per class, split 80/20 into (train, test) within each class.

    Class centers are drawn from N(offset, center_scale**2) per feature and
    samples from N(center, spread**2). A positive ``offset`` mimics
    non-negative pixel-like inputs. ``shape`` reshapes each sample, e.g.
    ``(1, 16, 16)`` for a CNN; its product must equal ``dim``.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1 or dim < 1:
        raise ValueError("per_class and dim must be >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    if shape is not None and int(np.prod(shape)) != dim:
        raise ValueError(f"shape {shape} does not hold {dim} features")
    centers = rng.normal(offset, center_scale, size=(classes, dim))
    x = centers[:, None, :] + spread * rng.normal(size=(classes, per_class, dim))
    n_train = max(1, int(round(0.8 * per_class))) if per_class > 1 else 1
    train_x = x[:, :n_train].reshape(-1, dim)
    test_x = x[:, n_train:].reshape(-1, dim)
    train_y = np.repeat(np.arange(classes), n_train)
    test_y = np.repeat(np.arange(classes), per_class - n_train)
    sample_shape = tuple(shape) if shape is not None else (dim,)
    p_train = rng.permutation(len(train_y))
    train = Dataset(train_x[p_train].astype(np.float32).reshape(-1, *sample_shape),
                    train_y[p_train], "train", classes)
    if len(test_y) == 0:
        # per_class == 1 leaves nothing for testing; reuse the training points
        return train, Dataset(train.inputs.copy(), train.labels.copy(), "test", classes)
    p_test = rng.permutation(len(test_y))
    test = Dataset(test_x[p_test].astype(np.float32).reshape(-1, *sample_shape),
                   test_y[p_test], "test", classes)
    return train, test


def split_dataset(data: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint random split: the first part holds ``round(fraction * len)`` samples."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(data))
    k = max(1, int(round(fraction * len(data))))
    return data.subset(np.sort(order[:k])), data.subset(np.sort(order[k:]))


def _allocate(n: int, counts: np.ndarray) -> np.ndarray:
    # largest-remainder allocation of n draws proportional to class sizes
    share = n * counts / counts.sum()
    alloc = np.floor(share).astype(np.int64)
    alloc = np.minimum(alloc, counts)
    rest = n - alloc.sum()
    order = np.lexsort((np.arange(len(counts)), -(share - np.floor(share))))
    while rest > 0:
        for c in order:
            if rest == 0:
                break
            if alloc[c] < counts[c]:
                alloc[c] += 1
                rest -= 1
    return alloc


def sample_encryption_set(train: Dataset, n: int, seed: int = 0) -> EncryptionSet:
    """Draw ``n`` samples without replacement, stratified by class when ``n >= classes``."""
    if n < 1:
        raise ValueError("encryption set size must be >= 1")
    if n > len(train):
        raise ValueError(f"cannot sample {n} items from a dataset of {len(train)}")
    rng = np.random.default_rng(seed)
    counts = np.bincount(train.labels, minlength=train.classes)
    if n >= train.classes and n < len(train):
        alloc = _allocate(n, counts)
        picks = []
        for c in range(train.classes):
            members = np.flatnonzero(train.labels == c)
            picks.append(rng.choice(members, size=alloc[c], replace=False))
        idx = rng.permutation(np.concatenate(picks))
    else:
        idx = rng.permutation(len(train))[:n]
    return EncryptionSet(train.inputs[idx], train.labels[idx], "encryption", train.classes,
                         indices=idx.astype(np.int64))


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    buf = path.read_bytes()
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ValueError(f"{path}: file too short for IDX header")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise ValueError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = int(np.prod(dims))
    if len(buf) - header != expected:
        raise ValueError(f"{path}: header declares {expected} bytes of data, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train", classes: int = 0) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1], shape (N, 1, H, W)."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise ValueError(f"{labels_path}: {len(labels)} labels for {len(images)} images in {images_path}")
    x = (images.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    return Dataset(x, labels.astype(np.int64), split, classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())
