"""RGBA float images in [0,1] with PNG I/O and a raw float depth dump."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image


class ImageRGBA:
    """H x W x 4 float64 image, channels RGB + alpha, all values in [0,1]."""

    def __init__(self, pixels):
        px = np.ascontiguousarray(pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 4:
            raise ValueError(f"expected (H,W,4), got {px.shape}")
        self.pixels = px

    @classmethod
    def blank(cls, width, height, rgba=(0.0, 0.0, 0.0, 0.0)):
        px = np.empty((height, width, 4))
        px[:] = np.asarray(rgba, dtype=np.float64)
        return cls(px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def rgb(self):
        return self.pixels[:, :, :3]

    @property
    def alpha(self):
        return self.pixels[:, :, 3]

    def composite_over_white(self):
        """RGB-only array with transparent regions blended to white."""
        a = self.alpha[:, :, None]
        return self.rgb * a + (1.0 - a)

    def clipped(self):
        return ImageRGBA(np.clip(self.pixels, 0.0, 1.0))

    def copy(self):
        return ImageRGBA(self.pixels.copy())


def save_png(image: ImageRGBA, path):
    arr = np.clip(np.round(image.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGBA").save(path)


def load_png(path) -> ImageRGBA:
    arr = np.asarray(Image.open(path).convert("RGBA"), dtype=np.float64) / 255.0
    return ImageRGBA(arr)


_DEPTH_MAGIC = b"FDEPTH01"


def save_depth(depth: np.ndarray, path):
    """Raw float32 depth dump: magic, uint32 width/height, row-major floats."""
    d = np.ascontiguousarray(depth, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(_DEPTH_MAGIC)
        fh.write(struct.pack("<II", d.shape[1], d.shape[0]))
        fh.write(d.tobytes())


def load_depth(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _DEPTH_MAGIC:
            raise ValueError("not a depth dump")
        w, h = struct.unpack("<II", fh.read(8))
        return np.frombuffer(fh.read(4 * w * h), dtype=np.float32).reshape(h, w).astype(np.float64)
