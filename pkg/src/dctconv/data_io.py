"""CIFAR binary ingestion, per-channel normalization and synthetic datasets."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

PIXELS = 32 * 32 * 3
CIFAR100_RECORD = PIXELS + 2
CIFAR10_RECORD = PIXELS + 1
STD_GUARD = 1e-8

CIFAR100_FILES = {"train": "train.bin", "test": "test.bin"}
CIFAR10_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


class FormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class Dataset:
    """Images ``(B, C, H, W)`` and integer labels.

    For autoencoding the targets are the images themselves, see :attr:`targets`.
    """

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 100
    coarse_labels: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        coarse = None if self.coarse_labels is None else self.coarse_labels[:n]
        return replace(self, images=self.images[:n], labels=self.labels[:n], coarse_labels=coarse)


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray


def _parse_records(raw: bytes, label_bytes: int, num_classes: int, source: str):
    record = PIXELS + label_bytes
    if len(raw) % record:
        whole = len(raw) // record
        raise FormatError(
            f"{source}: truncated record at byte offset {whole * record} "
            f"(file length {len(raw)} is not a multiple of {record})"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"{source}: label {labels[i]} >= {num_classes} in record {i} (byte offset {i * record})")
    coarse = arr[:, 0].astype(np.int64) if label_bytes == 2 else None
    images = arr[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels, coarse


def read_cifar100_file(path) -> Dataset:
    path = Path(path)
    images, labels, coarse = _parse_records(path.read_bytes(), 2, 100, str(path))
    return Dataset(images, labels, "train", 100, coarse)


def read_cifar10_file(path) -> Dataset:
    path = Path(path)
    images, labels, _ = _parse_records(path.read_bytes(), 1, 10, str(path))
    return Dataset(images, labels, "train", 10)


def resolve_data_dir(path=None) -> Path | None:
    """``path`` if given, else ``$DCTCONV_DATA_DIR``, else ``None``."""
    if path:
        return Path(path)
    env = os.environ.get("DCTCONV_DATA_DIR")
    return Path(env) if env else None


def load_cifar100(path, split: str = "train") -> Dataset:
    """Load a split of the CIFAR-100 binary distribution.

    ``path`` is either the ``.bin`` file itself or the directory holding
    ``train.bin`` / ``test.bin``.
    """
    if split not in CIFAR100_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    path = Path(path)
    f = path / CIFAR100_FILES[split] if path.is_dir() else path
    if not f.exists():
        raise FileNotFoundError(f"CIFAR-100 {split} file not found: {f}")
    return replace(read_cifar100_file(f), split=split)


def load_cifar10(path, split: str = "train") -> Dataset:
    path = Path(path)
    files = [path / n for n in CIFAR10_FILES[split]] if path.is_dir() else [path]
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise FileNotFoundError(f"CIFAR-10 {split} files not found: {missing}")
    parts = [read_cifar10_file(f) for f in files]
    return Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), split, 10)


def write_cifar(dataset: Dataset, path, fmt: str = "cifar100"):
    """Write ``dataset`` in CIFAR binary form; pixels are rounded to bytes."""
    n = len(dataset)
    if dataset.images.shape[1:] != (3, 32, 32):
        raise FormatError(f"CIFAR records hold 3x32x32 images, got {dataset.images.shape[1:]}")
    pixels = np.clip(np.rint(dataset.images.reshape(n, -1) * 255.0), 0, 255).astype(np.uint8)
    if fmt == "cifar100":
        coarse = dataset.coarse_labels if dataset.coarse_labels is not None else np.zeros(n, np.int64)
        head = np.stack([coarse, dataset.labels], axis=1).astype(np.uint8)
    elif fmt == "cifar10":
        head = dataset.labels.astype(np.uint8)[:, None]
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_bytes(np.concatenate([head, pixels], axis=1).tobytes())


def compute_stats(train: Dataset) -> ChannelStats:
    """Per-channel mean and standard deviation over all training pixels."""
    imgs = train.images
    if len(imgs) == 0:
        c = imgs.shape[1] if imgs.ndim == 4 else 3
        return ChannelStats(np.zeros(c), np.ones(c))
    mean = imgs.mean(axis=(0, 2, 3))
    std = imgs.std(axis=(0, 2, 3))
    std = np.where(std < STD_GUARD, 1.0, std)
    return ChannelStats(mean, std)


def normalize(dataset: Dataset, stats: ChannelStats) -> Dataset:
    imgs = (dataset.images - stats.mean[None, :, None, None]) / stats.std[None, :, None, None]
    return replace(dataset, images=imgs)


# -- synthetic sets ------------------------------------------------------------

def _balanced_labels(n, k, rng):
    labels = np.arange(n) % k
    rng.shuffle(labels)
    return labels


def _oriented_bars(n, k, size, channels, rng, noise=0.05, jitter=0.25):
    """A bright bar through a jittered center at angle ``pi * label / k`` on a noisy background.

    ``jitter`` is the half-width of the angle spread as a fraction of the
    class spacing, so classes stay disjoint while ``jitter < 0.5``.
    """
    labels = _balanced_labels(n, k, rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = np.pi * labels / k + rng.uniform(-jitter, jitter, n) * np.pi / k
    cy = size / 2 - 0.5 + rng.uniform(-size / 8, size / 8, n)
    cx = size / 2 - 0.5 + rng.uniform(-size / 8, size / 8, n)
    width = rng.uniform(0.8, 1.6, n) * size / 16
    # distance of each pixel from the line through (cy, cx) with direction theta
    d = np.abs(-(yy[None] - cy[:, None, None]) * np.cos(theta)[:, None, None]
               + (xx[None] - cx[:, None, None]) * np.sin(theta)[:, None, None])
    bar = np.exp(-0.5 * (d / width[:, None, None]) ** 2)
    color = rng.uniform(0.5, 1.0, (n, channels))
    background = rng.uniform(0.0, 0.3, (n, channels))
    imgs = background[:, :, None, None] + (color - background)[:, :, None, None] * bar[:, None]
    imgs += rng.normal(0.0, noise, imgs.shape)
    return np.clip(imgs, 0.0, 1.0), labels


def _gaussian_blobs(n, k, size, channels, rng, noise=0.0):
    """Soft colored blobs; the dominant blob sits on a ring at angle ``2 pi * label / k``."""
    labels = _balanced_labels(n, k, rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    imgs = np.tile(rng.uniform(0.0, 0.4, (n, channels))[:, :, None, None], (1, 1, size, size))
    angle = 2 * np.pi * labels / k
    centers = [(0.5 + 0.28 * np.sin(angle), 0.5 + 0.28 * np.cos(angle), rng.uniform(0.10, 0.16, n))]
    for _ in range(2):
        centers.append((rng.uniform(0.15, 0.85, n), rng.uniform(0.15, 0.85, n), rng.uniform(0.05, 0.10, n)))
    for cy, cx, r in centers:
        g = np.exp(-((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2)
                   / (2 * r[:, None, None] ** 2))
        color = rng.uniform(0.3, 1.0, (n, channels))
        imgs += color[:, :, None, None] * g[:, None]
    if noise:
        imgs += rng.normal(0.0, noise, imgs.shape)
    return np.clip(imgs, 0.0, 1.0), labels


SYNTHETIC_KINDS = {"oriented_bars": _oriented_bars, "gaussian_blobs": _gaussian_blobs}


def synthetic_dataset(kind="oriented_bars", n_train=1000, n_test=200, n_classes=10, size=16,
                      channels=3, seed=0, **options):
    """Seeded, exactly balanced train/test pair with pixels in [0, 1].

    ``options`` go to the generator (``noise``; ``jitter`` for bars).
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic dataset {kind!r}; expected one of {sorted(SYNTHETIC_KINDS)}")
    gen = SYNTHETIC_KINDS[kind]
    train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    xtr, ytr = gen(n_train, n_classes, size, channels, train_rng, **options)
    xte, yte = gen(n_test, n_classes, size, channels, test_rng, **options)
    return (Dataset(xtr, ytr, "train", n_classes), Dataset(xte, yte, "test", n_classes))
