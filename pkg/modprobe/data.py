"""MNIST-format ingestion, the halves task, deterministic splits and batching."""

import gzip
import struct
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) floats in [0, 1]
    labels: np.ndarray  # (N,) class indices
    split: str = "train"
    class_count: int = 10

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim == 3:
            images = images[..., None]
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise InvalidArgumentError(f"images must be (N, H, W, C), got shape {images.shape}")
        if len(images) != len(labels) or labels.ndim != 1:
            raise InvalidArgumentError(f"{len(images)} images but {labels.shape} labels")
        if self.split not in SPLITS:
            raise InvalidArgumentError(f"unknown split tag '{self.split}'")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.class_count):
            raise InvalidArgumentError(f"labels must lie in [0, {self.class_count})")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise InvalidArgumentError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def subset(self, indices: np.ndarray | Sequence[int], split: str | None = None) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], split or self.split, self.class_count)

    def head(self, count: int | None) -> "LabeledDataset":
        if count is None or count >= len(self):
            return self
        return self.subset(np.arange(count))

    def for_class(self, label: int) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.labels == label))


# =============================================================================
# IDX FILES
# =============================================================================


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(data: bytes, expected_magic: int, name: str) -> np.ndarray:
    if len(data) < 4:
        raise FormatError(f"{name}: file too short for an IDX header", offset=0)
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise FormatError(f"{name}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{name}: truncated dimension header", offset=len(data))
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(dims))
    if len(data) < header + count:
        raise FormatError(f"{name}: truncated payload, expected {count} bytes", offset=len(data))
    if len(data) > header + count:
        raise FormatError(f"{name}: trailing bytes after payload", offset=header + count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx_pair(images_path: str | Path, labels_path: str | Path, split: str = "train") -> LabeledDataset:
    """Read an IDX image/label file pair (optionally gzipped); pixels are scaled by 1/255."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}", offset=4
        )
    if labels.size and labels.max() > 9:
        raise FormatError(f"{labels_path}: label {labels.max()} outside 0..9")
    return LabeledDataset(images.astype(np.float64) / 255.0, labels, split)


def write_idx_pair(dataset: LabeledDataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a single-channel dataset as an IDX pair, pixels rounded to u8."""
    if dataset.images.shape[-1] != 1:
        raise InvalidArgumentError("IDX output supports single-channel images only")
    n, h, w, _ = dataset.images.shape
    pixels = np.rint(dataset.images[..., 0] * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


# =============================================================================
# HALVES TASK
# =============================================================================


def halve_width(images: np.ndarray) -> np.ndarray:
    """Average adjacent column pairs: (N, H, W, C) -> (N, H, W/2, C)."""
    if images.shape[2] % 2:
        raise InvalidArgumentError(f"image width {images.shape[2]} is odd")
    return (images[:, :, 0::2, :] + images[:, :, 1::2, :]) / 2.0


def make_halves_dataset(base: LabeledDataset, seed: int) -> LabeledDataset:
    """Pairs of half-width digits side by side, labelled by their sum mod 10.

    Source digits are sampled uniformly with replacement.
    """
    _, h, w, _ = base.images.shape
    if w % 2:
        raise InvalidArgumentError(f"image width {w} is odd")
    if h != w:
        raise InvalidArgumentError(f"base images must be square, got {h}x{w}")
    if base.class_count != 10:
        raise InvalidArgumentError("halves task needs a 10-class base dataset")

    rng = np.random.default_rng(seed)
    n = len(base)
    left = rng.integers(0, n, size=n)
    right = rng.integers(0, n, size=n)
    halved = halve_width(base.images)
    images = np.concatenate([halved[left], halved[right]], axis=2)
    labels = (base.labels[left] + base.labels[right]) % 10
    return LabeledDataset(images, labels, base.split, 10)


# =============================================================================
# SPLITS AND BATCHES
# =============================================================================


def split(
    dataset: LabeledDataset, fractions: Sequence[float], seed: int
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Shuffle once and cut into train/validation/test by cumulative fraction."""
    parts = np.asarray(fractions, dtype=np.float64)
    if parts.shape != (3,) or np.any(parts < 0) or not np.isclose(parts.sum(), 1.0, atol=1e-9):
        raise InvalidArgumentError(f"fractions must be three non-negative values summing to 1, got {fractions}")

    n = len(dataset)
    bounds = np.floor(np.cumsum(parts) * n).astype(np.int64)
    bounds[-1] = n
    order = np.random.default_rng(seed).permutation(n)
    pieces = np.split(order, bounds[:2])
    return tuple(  # type: ignore[return-value]
        dataset.subset(np.sort(idx), tag) for idx, tag in zip(pieces, SPLITS, strict=True)
    )


def carve_validation(
    train: LabeledDataset, fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Hold out a seed-fixed fraction of the training set for validation."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError(f"validation fraction must lie in (0, 1), got {fraction}")
    rest, validation, _ = split(train, (1.0 - fraction, fraction, 0.0), seed)
    return rest, validation


def iter_batches(n: int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Index batches of a fresh permutation seeded by seed ^ epoch; the last may be partial."""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch size must be positive, got {batch_size}")
    order = np.random.default_rng(seed ^ epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
