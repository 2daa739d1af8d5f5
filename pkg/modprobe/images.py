"""8-bit grayscale PGM output for visualizations."""

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError


def to_gray8(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> (H, W) u8; a trailing single channel is dropped, multi-channel is averaged."""
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.ndim == 3:
        pixels = pixels.mean(axis=2)
    if pixels.ndim != 2:
        raise InvalidArgumentError(f"expected an image, got shape {pixels.shape}")
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str | Path, image: np.ndarray, comment: str | None = None) -> None:
    """Binary PGM (P5), with an optional comment line after the magic."""
    buffer = io.BytesIO()
    Image.fromarray(to_gray8(image)).save(buffer, format="PPM")
    data = buffer.getvalue()
    if comment:
        line = " ".join(comment.splitlines())
        data = data.replace(b"P5\n", f"P5\n# {line}\n".encode(), 1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def read_pgm(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
