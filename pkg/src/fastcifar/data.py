"""Dataset ingestion, normalization, augmentation and epoch sampling.

Augmentation randomness is keyed by (seed, purpose, epoch) and indexed by the
original dataset index of each image, so an image's augmented view never
depends on which batch it lands in.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rng as rng_mod
from .exceptions import ConfigError, FormatError
from .ops import reflect_pad2d

log = logging.getLogger(__name__)

CIFAR10_CLASSES = ["airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck"]
RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILES = ["test_batch.bin"]

FLIP_POLICIES = ("none", "random", "alternating")
SAMPLING_MODES = ("random_reshuffle", "with_replacement", "sequential")


@dataclass(frozen=True)
class NormalizeParams:
    mean: tuple[float, float, float] = (0.4914, 0.4822, 0.4465)
    std: tuple[float, float, float] = (0.2470, 0.2435, 0.2616)

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"std entries must be positive, got {self.std}")


CIFAR_NORM = NormalizeParams()


@dataclass
class Dataset:
    images: np.ndarray  # uint8, N×3×32×32
    labels: np.ndarray  # int64, N
    classes: list[str] = field(default_factory=lambda: list(CIFAR10_CLASSES))

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1:] != (3, 32, 32):
            raise FormatError(f"images must be N×3×32×32, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], list(self.classes))

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.images, np.asarray(labels, dtype=np.int64), list(self.classes))


@dataclass(frozen=True)
class AugmentPolicy:
    flip: str = "alternating"
    translate_px: int = 2
    cutout_px: int = 0
    seed: int = 0
    hash_seed: int = 42

    def __post_init__(self):
        if self.flip not in FLIP_POLICIES:
            raise ConfigError(f"flip must be one of {FLIP_POLICIES}, got {self.flip!r}")
        if not 0 <= self.translate_px < 16:
            raise ConfigError(f"translate_px must lie in [0, 16), got {self.translate_px}")
        if not 0 <= self.cutout_px <= 32:
            raise ConfigError(f"cutout_px must lie in [0, 32], got {self.cutout_px}")


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _parse_records(raw: bytes, name: str) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) % RECORD_BYTES:
        raise FormatError(f"{name}: size {len(raw)} is not a multiple of {RECORD_BYTES}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise FormatError(f"{name}: record {bad} has label {labels[bad]} (expected < 10)")
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), labels


def _resolve_cifar_dir(root: Path, files: list[str]) -> Path:
    for cand in (root, root / "cifar-10-batches-bin"):
        if (cand / files[0]).exists():
            return cand
    return root


def load_cifar10(directory: str | os.PathLike, split: str = "train") -> Dataset:
    """Read the official CIFAR-10 binary batches (``data_batch_{1..5}.bin``, ``test_batch.bin``)."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    files = TRAIN_FILES if split == "train" else TEST_FILES
    root = _resolve_cifar_dir(Path(directory), files)
    images, labels = [], []
    for name in files:
        path = root / name
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise OSError(f"cannot read CIFAR-10 batch {path}: {e.strerror or e}") from e
        im, lb = _parse_records(raw, str(path))
        images.append(im)
        labels.append(lb)
    return Dataset(np.concatenate(images), np.concatenate(labels))


ARCHIVE_MAGIC = b"ADS1"


def save_archive(path: str | os.PathLike, ds: Dataset) -> None:
    """Write a generic 32×32 dataset: ``ADS1 | u32 N | u8 C | N×3072 pixels | N labels``."""
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<IB", len(ds), len(ds.classes)))
        f.write(np.ascontiguousarray(ds.images, dtype=np.uint8).tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_archive(path: str | os.PathLike) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != ARCHIVE_MAGIC:
        raise FormatError(f"{path}: not a dataset archive (bad magic)")
    n, c = struct.unpack("<IB", raw[4:9])
    body = raw[9:]
    if len(body) != n * 3072 + n:
        raise FormatError(f"{path}: expected {n * 3073} payload bytes, found {len(body)}")
    images = np.frombuffer(body[:n * 3072], dtype=np.uint8).reshape(n, 3, 32, 32).copy()
    labels = np.frombuffer(body[n * 3072:], dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= c:
        raise FormatError(f"{path}: label {labels.max()} out of range for {c} classes")
    return Dataset(images, labels, [f"class{i}" for i in range(c)])


def load_dataset(path: str | os.PathLike, split: str = "train") -> Dataset:
    """Load ``path`` as a dataset archive file, or as a CIFAR-10 binary directory."""
    p = Path(path)
    if p.is_file():
        return load_archive(p)
    archive = p / f"{split}.ads"
    if archive.is_file():
        return load_archive(archive)
    return load_cifar10(p, split)


def synthetic_dataset(n: int, seed: int = 0, n_classes: int = 10) -> Dataset:
    """A small learnable stand-in for CIFAR-10, used by smoke tests and demos.

    Each class owns a smooth random color template; images are the template
    under a random horizontal flip, shift and brightness change, plus noise.
    """
    templates = rng_mod.stream(1234, "synthetic-templates").normal(size=(n_classes, 3, 4, 4))
    templates = np.kron(templates, np.ones((1, 1, 8, 8)))
    g = rng_mod.stream(seed, "synthetic-images")
    labels = g.integers(0, n_classes, size=n)
    imgs = templates[labels]
    flips = g.random(n) < 0.5
    imgs[flips] = imgs[flips, :, :, ::-1]
    shifts = g.integers(-4, 5, size=(n, 2))
    for i, (sy, sx) in enumerate(shifts):
        imgs[i] = np.roll(imgs[i], (sy, sx), axis=(1, 2))
    imgs = imgs * 45 + 128 + g.normal(0, 25, size=(n, 1, 1, 1)) + g.normal(0, 30, size=imgs.shape)
    images = np.clip(imgs, 0, 255).astype(np.uint8)
    return Dataset(images, labels.astype(np.int64), [f"class{i}" for i in range(n_classes)])


# ---------------------------------------------------------------------------
# normalization and flips
# ---------------------------------------------------------------------------

def normalize(images: np.ndarray, p: NormalizeParams = CIFAR_NORM) -> np.ndarray:
    mean = np.asarray(p.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(p.std, dtype=np.float32)[:, None, None]
    return (images.astype(np.float32) / np.float32(255) - mean) / std


def hash_index(n: int, seed: int = 42) -> int:
    """Last 8 hex digits of MD5 of the decimal string of ``n * seed``."""
    k = n * seed
    return int(hashlib.md5(str(k).encode("utf-8")).hexdigest()[-8:], 16)


@lru_cache(maxsize=8)
def _hash_table(n: int, seed: int) -> np.ndarray:
    table = np.fromiter((hash_index(i, seed) for i in range(n)), dtype=np.int64, count=n)
    table.flags.writeable = False
    return table


def hashed_indices(indices: np.ndarray, seed: int = 42) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return indices.copy()
    return _hash_table(int(indices.max()) + 1, seed)[indices]


def flip_mask(policy: AugmentPolicy, indices: np.ndarray, epoch: int, n_total: int | None = None) -> np.ndarray:
    """Flip decisions for the given dataset indices at ``epoch`` (zero-based).

    ``random`` draws a fresh Bernoulli(0.5) per index from the (seed, epoch)
    stream; draw ``i`` always belongs to index ``i``, whatever ``n_total`` is.
    ``alternating`` flips iff ``(hash(index) + epoch)`` is odd.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if policy.flip == "none":
        return np.zeros(indices.shape, dtype=bool)
    if policy.flip == "random":
        n = n_total if n_total is not None else (int(indices.max()) + 1 if indices.size else 0)
        draws = rng_mod.stream(policy.seed, "flip", epoch).random(n)
        return draws[indices] < 0.5
    return (hashed_indices(indices, policy.hash_seed) + epoch) % 2 == 1


def flip_decision(policy: AugmentPolicy, index: int, epoch: int) -> bool:
    return bool(flip_mask(policy, np.array([index]), epoch)[0])


def apply_flip(images: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(images),):
        raise ValueError(f"mask must have length {len(images)}, got shape {mask.shape}")
    return np.where(mask[:, None, None, None], images[..., ::-1], images)


# ---------------------------------------------------------------------------
# translation and cutout
# ---------------------------------------------------------------------------

def translate(images: np.ndarray, shifts: np.ndarray, px: int) -> np.ndarray:
    """Crop each reflect-padded image at offset ``(px + sy, px + sx)``."""
    if px == 0:
        return images.copy()
    n, c, h, w = images.shape
    padded = reflect_pad2d(images, px)
    shifts = np.asarray(shifts, dtype=np.int64)
    rows = (px + shifts[:, 0])[:, None] + np.arange(h)
    cols = (px + shifts[:, 1])[:, None] + np.arange(w)
    out = np.take_along_axis(padded, rows[:, None, :, None], axis=2)
    return np.take_along_axis(out, cols[:, None, None, :], axis=3)


def random_translate(images: np.ndarray, px: int, rng: np.random.Generator) -> np.ndarray:
    """Random translation by up to ``px`` pixels with reflection padding."""
    if px < 0:
        raise ValueError(f"translation must be non-negative, got {px}")
    if px >= min(images.shape[-2:]):
        raise ValueError(f"translation {px} too large for {images.shape[-2:]} images")
    if px == 0:
        return images.copy()
    shifts = rng.integers(-px, px + 1, size=(len(images), 2))
    return translate(images, shifts, px)


def apply_cutout(images: np.ndarray, centers: np.ndarray, size: int) -> np.ndarray:
    """Zero a ``size``×``size`` square around each center, clipped at the borders."""
    if size == 0:
        return images.copy()
    h, w = images.shape[-2:]
    centers = np.asarray(centers, dtype=np.int64)
    y0 = np.clip(centers[:, 0] - size // 2, 0, h)
    x0 = np.clip(centers[:, 1] - size // 2, 0, w)
    y1 = np.clip(centers[:, 0] - size // 2 + size, 0, h)
    x1 = np.clip(centers[:, 1] - size // 2 + size, 0, w)
    ys, xs = np.arange(h), np.arange(w)
    in_y = (ys >= y0[:, None]) & (ys < y1[:, None])
    in_x = (xs >= x0[:, None]) & (xs < x1[:, None])
    mask = in_y[:, :, None] & in_x[:, None, :]
    return np.where(mask[:, None], images.dtype.type(0), images)


def cutout(images: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= size <= 32:
        raise ValueError(f"cutout size must lie in [0, 32], got {size}")
    h, w = images.shape[-2:]
    centers = np.stack([rng.integers(0, h, len(images)), rng.integers(0, w, len(images))], axis=1)
    return apply_cutout(images, centers, size)


# ---------------------------------------------------------------------------
# sampling and batching
# ---------------------------------------------------------------------------

def epoch_indices(mode: str, n: int, epoch: int, seed: int = 0) -> np.ndarray:
    if n <= 0:
        raise ValueError(f"dataset size must be positive, got {n}")
    if mode == "sequential":
        return np.arange(n)
    g = rng_mod.stream(seed, "sampling", epoch)
    if mode == "random_reshuffle":
        return g.permutation(n)
    if mode == "with_replacement":
        return g.integers(0, n, size=n)
    raise ConfigError(f"sampling mode must be one of {SAMPLING_MODES}, got {mode!r}")


def batches_per_epoch(n: int, batch_size: int, drop_last: bool) -> int:
    return n // batch_size if drop_last else -(-n // batch_size)


@dataclass
class EpochAugmentation:
    """Per-index augmentation parameters for one epoch."""

    flip: np.ndarray
    shifts: np.ndarray | None
    centers: np.ndarray | None

    @classmethod
    def draw(cls, policy: AugmentPolicy, n: int, epoch: int) -> "EpochAugmentation":
        flips = flip_mask(policy, np.arange(n), epoch, n_total=n)
        shifts = centers = None
        if policy.translate_px > 0:
            px = policy.translate_px
            shifts = rng_mod.stream(policy.seed, "translate", epoch).integers(-px, px + 1, size=(n, 2))
        if policy.cutout_px > 0:
            centers = rng_mod.stream(policy.seed, "cutout", epoch).integers(0, 32, size=(n, 2))
        return cls(flips, shifts, centers)

    def apply(self, images: np.ndarray, idx: np.ndarray, policy: AugmentPolicy) -> np.ndarray:
        x = apply_flip(images, self.flip[idx])
        if self.shifts is not None:
            x = translate(x, self.shifts[idx], policy.translate_px)
        if self.centers is not None:
            x = apply_cutout(x, self.centers[idx], policy.cutout_px)
        return np.ascontiguousarray(x)


def make_batches(dataset: Dataset, policy: AugmentPolicy, mode: str, batch_size: int, epoch: int,
                 drop_last: bool = True, seed: int | None = None,
                 norm: NormalizeParams = CIFAR_NORM) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` batches for one epoch.

    Images are normalized, flipped, translated and cut out, in that order.
    ``seed`` drives the sampling order and defaults to ``policy.seed``.
    """
    if batch_size <= 0:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    n = len(dataset)
    order = epoch_indices(mode, n, epoch, policy.seed if seed is None else seed)
    aug = EpochAugmentation.draw(policy, n, epoch)
    for b in range(batches_per_epoch(n, batch_size, drop_last)):
        idx = order[b * batch_size:(b + 1) * batch_size]
        x = normalize(dataset.images[idx], norm)
        yield aug.apply(x, idx, policy), dataset.labels[idx]
