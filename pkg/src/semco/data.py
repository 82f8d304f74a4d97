"""Datasets, loaders and the stratified labeled/unlabeled split."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CIFAR_SIDE = 32
CIFAR_PIXELS = CIFAR_SIDE * CIFAR_SIDE * 3

CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]

# the 8-class synthetic task: four visually similar pairs
SYNTHETIC_CLASSES = [
    "bicycle", "motorcycle", "boy", "girl", "man", "woman", "oak_tree", "pine_tree",
]


@dataclass
class Dataset:
    """Images (``N x H x W x C`` in ``[0, 1]``) with integer labels and stable sample ids."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DataError(f"images {self.images.shape} do not match {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label index out of range of class names")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.class_names, self.ids[idx])


def make_splits(train: Dataset, n_labeled: int, seed: int, test: Dataset | None = None):
    """Stratified labeled set of ``n_labeled / K`` samples per class; the rest is unlabeled.

    Unlabeled samples keep their true labels for statistics only.
    """
    K = train.num_classes
    if n_labeled > len(train):
        raise DataError(f"n_labeled={n_labeled} exceeds the {len(train)} training samples")
    if n_labeled % K:
        raise DataError(f"n_labeled={n_labeled} is not divisible by the {K} classes")
    per_class = n_labeled // K
    rng = np.random.default_rng([int(seed), 7])
    labeled = []
    for c in range(K):
        members = np.flatnonzero(train.labels == c)
        if len(members) < per_class:
            raise DataError(
                f"class {train.class_names[c]!r} has {len(members)} samples, {per_class} needed"
            )
        labeled.extend(rng.choice(members, size=per_class, replace=False).tolist())
    labeled = np.sort(np.array(labeled, dtype=np.int64))
    unlabeled = np.setdiff1d(np.arange(len(train)), labeled)
    if test is None:
        test = Dataset(train.images[:0], train.labels[:0], train.class_names)
    return train.subset(labeled), train.subset(unlabeled), test


# ---------------------------------------------------------------------------
# Loaders


def read_cifar_binary(path, label_bytes=None, class_names=None) -> Dataset:
    """Read a CIFAR-10 (1 label byte) or CIFAR-100 (coarse + fine label bytes) batch.

    For CIFAR-100 the fine label is used.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    raw = np.fromfile(path, dtype=np.uint8)
    if label_bytes is None:
        if raw.size % (CIFAR_PIXELS + 1) == 0:
            label_bytes = 1
        elif raw.size % (CIFAR_PIXELS + 2) == 0:
            label_bytes = 2
        else:
            raise DataError(f"{path}: size {raw.size} is not a whole number of CIFAR records")
    rec = CIFAR_PIXELS + label_bytes
    if raw.size % rec:
        raise DataError(f"{path}: size {raw.size} is not a multiple of {rec}")
    rows = raw.reshape(-1, rec)
    labels = rows[:, label_bytes - 1].astype(np.int64)
    images = rows[:, label_bytes:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    if class_names is None:
        n = 10 if label_bytes == 1 else 100
        class_names = CIFAR10_CLASSES if n == 10 else [f"class_{i}" for i in range(n)]
    return Dataset(images.astype(np.float32) / 255.0, labels, list(class_names))


def write_cifar_binary(ds: Dataset, path, label_bytes=1):
    imgs = np.round(ds.images * 255).astype(np.uint8).transpose(0, 3, 1, 2).reshape(len(ds), -1)
    lab = np.zeros((len(ds), label_bytes), dtype=np.uint8)
    lab[:, -1] = ds.labels
    np.hstack([lab, imgs]).tofile(path)


def read_image_directory(path) -> Dataset:
    """``<root>/<class>/<file>`` with ``.png``/``.jpg`` images or ``.npy`` arrays."""
    from PIL import Image

    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    images, labels = [], []
    for c, name in enumerate(class_names):
        for f in sorted((root / name).iterdir()):
            if f.suffix == ".npy":
                arr = np.load(f).astype(np.float32)
            elif f.suffix.lower() in (".png", ".jpg", ".jpeg"):
                arr = np.asarray(Image.open(f).convert("RGB"), dtype=np.float32) / 255.0
            else:
                continue
            if arr.ndim == 2:
                arr = arr[..., None]
            images.append(arr)
            labels.append(c)
    if not images:
        raise DataError(f"{root}: no images found")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"{root}: images have differing shapes {sorted(shapes)}")
    return Dataset(np.stack(images), np.array(labels), class_names)


def read_npz(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with np.load(path, allow_pickle=False) as z:
        if "images" not in z or "labels" not in z:
            raise DataError(f"{path}: expected 'images' and 'labels' arrays")
        images = z["images"]
        if images.dtype == np.uint8:
            images = images.astype(np.float32) / 255.0
        labels = z["labels"]
        names = [str(s) for s in z["class_names"]] if "class_names" in z else None
    if names is None:
        names = [str(i) for i in range(int(labels.max()) + 1)]
    return Dataset(images, labels, names)


def write_npz(ds: Dataset, path):
    np.savez(path, images=ds.images, labels=ds.labels, class_names=np.array(ds.class_names))


def load_dataset(path, class_names=None) -> Dataset:
    path = Path(path)
    if path.is_dir():
        return read_image_directory(path)
    if path.suffix == ".npz":
        return read_npz(path)
    return read_cifar_binary(path, class_names=class_names)


# ---------------------------------------------------------------------------
# Synthetic task


def _grating(side, freq, angle, phase):
    yy, xx = np.mgrid[0:side, 0:side] / side
    return np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)


def make_synthetic(
    n_per_class: int,
    seed: int = 0,
    side: int = 16,
    pair_gap: float = 0.35,
    noise: float = 0.12,
    class_names=SYNTHETIC_CLASSES,
) -> Dataset:
    """Classes come in consecutive pairs sharing a coloured grating.

    Pair members differ only by the colour of a small patch placed at a
    random position; ``pair_gap`` sets how far apart the two patch colours
    are, so lower values make each pair harder to tell apart.
    """
    K = len(class_names)
    if K % 2:
        raise ValueError("the synthetic task needs an even number of classes")
    proto = np.random.default_rng(12345)  # pair and class prototypes are fixed
    n_pairs = K // 2
    pair_color = proto.uniform(0.2, 0.8, size=(n_pairs, 3))
    pair_freq = 1.5 + np.arange(n_pairs) % 3
    pair_angle = np.arange(n_pairs) * np.pi / n_pairs
    patch_base = proto.uniform(0.3, 0.7, size=(n_pairs, 3))
    direction = proto.normal(size=(n_pairs, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)

    rng = np.random.default_rng([int(seed), 11])
    images, labels = [], []
    patch = max(2, side // 4)
    for c in range(K):
        pair = c // 2
        sign = 1 if c % 2 == 0 else -1
        patch_color = np.clip(patch_base[pair] + sign * pair_gap / 2 * direction[pair], 0, 1)
        for _ in range(n_per_class):
            g = _grating(side, pair_freq[pair], pair_angle[pair], rng.uniform(0, 2 * np.pi))
            amp = rng.uniform(0.6, 1.0)
            img = 0.5 + 0.35 * amp * g[..., None] * (pair_color[pair] - 0.5) * 2
            y, x = rng.integers(0, side - patch + 1, size=2)
            img[y : y + patch, x : x + patch] = patch_color
            img = img + rng.normal(0, noise, size=img.shape)
            images.append(np.clip(img, 0, 1))
            labels.append(c)
    order = rng.permutation(len(labels))
    return Dataset(np.array(images)[order], np.array(labels)[order], list(class_names))
