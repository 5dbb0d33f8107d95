"""8-bit RGB PNG round-trips for (3, H, W) float images in [0, 1].

Quantization is round-to-nearest byte; loading returns byte/255, so
save -> load -> save is byte-identical and one round-trip moves any value by
at most 1/510.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Quantize a (3,H,W) float image to (H,W,3) uint8."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"expected a (3,H,W) image, got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return q.transpose(1, 2, 0)


def save_image(img: np.ndarray, path):
    Image.fromarray(to_bytes(img), mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DataError(f"{path}: expected a PNG file, got {im.format}")
            if im.mode != "RGB":
                raise DataError(f"{path}: expected an 8-bit RGB PNG, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: unreadable image ({exc})") from exc
    return (arr.transpose(2, 0, 1).astype(np.float32)) / np.float32(255.0)
