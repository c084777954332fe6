"""Grid-based 2D image deformation.

A G x G grid of pixel-unit offsets is bilinearly interpolated into a dense
per-pixel offset field o(p); the warped image is the backward warp
output(p) = bilinear_sample(input, p - o(p)). Samples that fall outside the
input return transparent black. Grid vertex (i, j) sits at
(i*(W-1)/(G-1), j*(H-1)/(G-1)), so the grid corners pin to image corners.
"""

from __future__ import annotations

import json

import numpy as np

from .image import ImageRGBA

DEFAULT_GRID = 20


class DeformationField2D:
    """offsets: (G, G, 2) pixel displacements, indexed [row=j, col=i]."""

    def __init__(self, offsets, max_offset=None):
        off = np.ascontiguousarray(offsets, dtype=np.float64)
        if off.ndim != 3 or off.shape[0] != off.shape[1] or off.shape[2] != 2:
            raise ValueError(f"offsets must be (G,G,2), got {off.shape}")
        if not np.all(np.isfinite(off)):
            raise ValueError("non-finite deformation field entries")
        self.offsets = off
        self.max_offset = max_offset

    @classmethod
    def zeros(cls, grid_size=DEFAULT_GRID):
        return cls(np.zeros((grid_size, grid_size, 2)))

    @property
    def grid_size(self):
        return self.offsets.shape[0]

    def check_bound(self, width, height):
        bound = self.max_offset
        if bound is None:
            bound = 0.1 * min(width, height)
        mag = np.abs(self.offsets).max() if self.offsets.size else 0.0
        if mag > bound + 1e-9:
            raise ValueError(f"field offset {mag:.3g} exceeds bound {bound:.3g}")

    def to_json(self) -> str:
        return json.dumps({
            "grid_size": int(self.grid_size),
            "offsets": np.round(self.offsets, 12).ravel().tolist(),  # row-major
        })

    @classmethod
    def from_json(cls, text: str) -> "DeformationField2D":
        doc = json.loads(text)
        g = int(doc["grid_size"])
        return cls(np.array(doc["offsets"], dtype=np.float64).reshape(g, g, 2))

    def copy(self):
        return DeformationField2D(self.offsets.copy(), self.max_offset)


def _grid_interp_weights(width, height, grid_size):
    """Per-pixel (cell indices, bilinear weights) into the offset grid."""
    g = grid_size
    sx = (g - 1) / max(width - 1, 1)
    sy = (g - 1) / max(height - 1, 1)
    px = (np.arange(width) + 0.0) * sx
    py = (np.arange(height) + 0.0) * sy
    gx, gy = np.meshgrid(px, py)
    i0 = np.clip(np.floor(gx).astype(np.int64), 0, g - 2)
    j0 = np.clip(np.floor(gy).astype(np.int64), 0, g - 2)
    fx = gx - i0
    fy = gy - j0
    return i0, j0, fx, fy


def pixel_offsets(field: DeformationField2D, width, height) -> np.ndarray:
    """Dense (H, W, 2) per-pixel offsets via bilinear grid interpolation."""
    i0, j0, fx, fy = _grid_interp_weights(width, height, field.grid_size)
    off = field.offsets
    w00 = ((1 - fx) * (1 - fy))[:, :, None]
    w10 = (fx * (1 - fy))[:, :, None]
    w01 = ((1 - fx) * fy)[:, :, None]
    w11 = (fx * fy)[:, :, None]
    return (w00 * off[j0, i0] + w10 * off[j0, i0 + 1]
            + w01 * off[j0 + 1, i0] + w11 * off[j0 + 1, i0 + 1])


def _bilinear_sample(pixels: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample (H,W,C) at continuous pixel-index coords; outside -> zeros.

    Returns (samples, tap state) where tap state is reused by the adjoint.
    """
    h, w = pixels.shape[:2]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    def tap(xi, yi):
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = np.clip(xi, 0, w - 1)
        yi_c = np.clip(yi, 0, h - 1)
        vals = pixels[yi_c, xi_c]
        return np.where(ok[..., None], vals, 0.0), ok

    v00, ok00 = tap(x0, y0)
    v10, ok10 = tap(x0 + 1, y0)
    v01, ok01 = tap(x0, y0 + 1)
    v11, ok11 = tap(x0 + 1, y0 + 1)
    w00 = ((1 - fx) * (1 - fy))[..., None]
    w10 = (fx * (1 - fy))[..., None]
    w01 = ((1 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    out = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11
    state = (x0, y0, fx, fy, (v00, v10, v01, v11), (ok00, ok10, ok01, ok11))
    return out, state


def deform_image(image: ImageRGBA, field: DeformationField2D) -> ImageRGBA:
    """Backward warp of all four channels by the interpolated offset field."""
    field.check_bound(image.width, image.height)
    off = pixel_offsets(field, image.width, image.height)
    xs, ys = np.meshgrid(np.arange(image.width, dtype=np.float64),
                         np.arange(image.height, dtype=np.float64))
    out, _ = _bilinear_sample(image.pixels, xs - off[:, :, 0], ys - off[:, :, 1])
    return ImageRGBA(np.clip(out, 0.0, 1.0))


def deform_backward(image: ImageRGBA, field: DeformationField2D,
                    grad_pixels: np.ndarray) -> np.ndarray:
    """Gradient of deform_image wrt the field offsets; exact adjoint of the
    two bilinear chains (away from the bilinear kinks)."""
    h, w = image.height, image.width
    off = pixel_offsets(field, w, h)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    sx = xs - off[:, :, 0]
    sy = ys - off[:, :, 1]
    _, state = _bilinear_sample(image.pixels, sx, sy)
    x0, y0, fx, fy, (v00, v10, v01, v11), _oks = state
    g = np.asarray(grad_pixels, dtype=np.float64)

    # d sample / d sx and d sample / d sy (per channel, summed with upstream)
    dvdx = ((1 - fy)[..., None] * (v10 - v00) + fy[..., None] * (v11 - v01))
    dvdy = ((1 - fx)[..., None] * (v01 - v00) + fx[..., None] * (v11 - v10))
    g_sx = (g * dvdx).sum(axis=2)
    g_sy = (g * dvdy).sum(axis=2)
    # sx = x - ox, sy = y - oy
    g_off = np.stack([-g_sx, -g_sy], axis=2)

    i0, j0, fgx, fgy = _grid_interp_weights(w, h, field.grid_size)
    grad_field = np.zeros_like(field.offsets)
    for di, dj, wgt in ((0, 0, (1 - fgx) * (1 - fgy)), (1, 0, fgx * (1 - fgy)),
                        (0, 1, (1 - fgx) * fgy), (1, 1, fgx * fgy)):
        np.add.at(grad_field, (j0 + dj, i0 + di), wgt[:, :, None] * g_off)
    return grad_field


def smoothness_loss(field: DeformationField2D) -> float:
    """Mean over 4-connected grid edges of squared neighbor offset differences."""
    off = field.offsets
    g = field.grid_size
    dh = off[:, 1:] - off[:, :-1]
    dv = off[1:, :] - off[:-1, :]
    n_edges = 2 * g * (g - 1)
    return float((np.sum(dh ** 2) + np.sum(dv ** 2)) / n_edges)


def smoothness_grad(field: DeformationField2D) -> np.ndarray:
    off = field.offsets
    g = field.grid_size
    n_edges = 2 * g * (g - 1)
    grad = np.zeros_like(off)
    dh = off[:, 1:] - off[:, :-1]
    dv = off[1:, :] - off[:-1, :]
    grad[:, 1:] += 2 * dh
    grad[:, :-1] -= 2 * dh
    grad[1:, :] += 2 * dv
    grad[:-1, :] -= 2 * dv
    return grad / n_edges
