"""8-bit RGBA textures and bilinear sampling.

Pixel rows are stored top row first, as in image files. UV ``v = 0`` is the
bottom edge of the image, so texel ``(x, y)`` with centre
``((x + 0.5) / W, (y + 0.5) / H)`` lives in array row ``H - 1 - y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image


@dataclass(eq=False)
class Texture:
    pixels: np.ndarray  # (H, W, 4) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = np.repeat(px[:, :, None], 3, axis=2)
        if px.ndim != 3 or px.shape[2] not in (3, 4):
            raise ValueError(f"texture must be (H, W, 3|4), got {px.shape}")
        if px.shape[2] == 3:
            px = np.concatenate([px, np.full(px.shape[:2] + (1,), 255, dtype=px.dtype)], axis=2)
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("texture must be at least 1x1")
        self.pixels = np.ascontiguousarray(px, dtype=np.uint8)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, rgba=(0, 0, 0, 0)) -> "Texture":
        px = np.empty((height, width, 4), dtype=np.uint8)
        px[:] = np.asarray(rgba, dtype=np.uint8)
        return cls(px)

    def to_float(self) -> np.ndarray:
        """(H, W, 4) float64 in [0, 1]."""
        return self.pixels.astype(np.float64) / 255.0

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def load_texture(path: str | Path) -> Texture:
    with Image.open(path) as im:
        return Texture(np.asarray(im.convert("RGBA")))


def save_texture(texture: Texture, path: str | Path) -> None:
    Image.fromarray(texture.pixels, mode="RGBA").save(path)


@njit(cache=True, nogil=True)
def sample_bilinear(img, u, v, out):
    """Bilinear, clamp-to-edge lookup of ``img`` (H, W, C) at UV (u, v) into ``out``."""
    h, w, c = img.shape
    x = u * w - 0.5
    y = h - v * h - 0.5
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    x1 = min(max(x0 + 1, 0), w - 1)
    y1 = min(max(y0 + 1, 0), h - 1)
    x0 = min(max(x0, 0), w - 1)
    y0 = min(max(y0, 0), h - 1)
    for k in range(c):
        top = img[y0, x0, k] * (1.0 - fx) + img[y0, x1, k] * fx
        bot = img[y1, x0, k] * (1.0 - fx) + img[y1, x1, k] * fx
        out[k] = top * (1.0 - fy) + bot * fy
