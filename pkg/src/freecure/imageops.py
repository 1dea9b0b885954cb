"""Small image helpers: resizing, quantization, PNG persistence."""
from __future__ import annotations

import numpy as np
from PIL import Image


def bilinear_resize(src: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resize a 2-D map with bilinear sampling and edge clamping.

    Sample positions follow the half-pixel convention: target pixel centers
    are mapped into the source grid, so a same-shape call is an exact copy.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {src.shape}")
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise ValueError("target shape must be positive")
    sh, sw = src.shape
    if (sh, sw) == (h, w):
        return src.copy()
    rows = np.clip((np.arange(h) + 0.5) * (sh / h) - 0.5, 0.0, sh - 1.0)
    cols = np.clip((np.arange(w) + 0.5) * (sw / w) - 0.5, 0.0, sw - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, sh - 1)
    c1 = np.minimum(c0 + 1, sw - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = src[r0][:, c0] * (1.0 - fc) + src[r0][:, c1] * fc
    bot = src[r1][:, c0] * (1.0 - fc) + src[r1][:, c1] * fc
    return top * (1.0 - fr) + bot * fr


def block_upsample(src: np.ndarray, factor: int) -> np.ndarray:
    """Integer upsample by pixel replication. Keeps block edges exact."""
    return np.repeat(np.repeat(np.asarray(src), factor, axis=0), factor, axis=1)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0, 1] to 8-bit with round-half-up at 255."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Write a float RGB image as an 8-bit PNG."""
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def save_gray(path, map2d: np.ndarray) -> None:
    """Write a float map in [0, 1] as an 8-bit grayscale PNG."""
    Image.fromarray(to_uint8(map2d), mode="L").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read a PNG back into a float RGB image in [0, 1]."""
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))
