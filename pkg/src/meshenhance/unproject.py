"""Vertex coloring from posed images (the unprojection operation).

Each vertex samples every view at its projected position (bilinear). A
view's weight is the cosine between the vertex normal and the per-vertex
direction toward that camera, clamped to zero below cos_threshold, zeroed
for occluded vertices (projected depth beyond the view's z-buffer by more
than depth_eps) and for samples outside the image or on alpha < 0.5.
Vertices no view covers are filled by neighbor-averaging diffusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .camera import Camera, project_points
from .image import ImageRGBA
from .mesh import Mesh, vertex_normals
from .raster import rasterize

DEFAULT_COS_THRESHOLD = 0.1
DEPTH_EPS_SCALE = 1e-3
DIFFUSION_ITERS = 50


class UnprojectError(ValueError):
    pass


@dataclass
class PosedImage:
    image: ImageRGBA
    camera: Camera


@dataclass
class UnprojectCache:
    """Geometry-dependent unprojection state, reusable across image updates."""

    weights: np.ndarray            # (V, K) per-view weights, already masked
    wsum: np.ndarray               # (V,)
    sample_mats: list              # K sparse (V, H*W) bilinear samplers
    shapes: list                   # K (H, W)
    covered: np.ndarray            # (V,) bool
    adjacency: sp.csr_matrix       # (V, V) vertex adjacency for the fallback

    def apply(self, images: list) -> np.ndarray:
        """Weighted bilinear sampling -> (V, 4) colors (before fallback)."""
        V = len(self.wsum)
        acc = np.zeros((V, 4))
        for k, img in enumerate(images):
            px = img.pixels.reshape(-1, 4)
            acc += self.weights[:, k:k + 1] * (self.sample_mats[k] @ px)
        colors = np.zeros((V, 4))
        colors[self.covered] = acc[self.covered] / self.wsum[self.covered, None]
        colors[:, 3] = 1.0
        return colors

    def apply_adjoint(self, grad_colors: np.ndarray) -> list:
        """Adjoint of apply(): (V,4) grads -> per-view (H,W,4) image grads."""
        out = []
        g = np.where(self.covered[:, None], grad_colors, 0.0).astype(np.float64)
        g = g.copy()
        g[self.covered] /= self.wsum[self.covered, None]
        g[:, 3] = 0.0  # vertex alpha is set constant, not sampled through
        for k, (h, w) in enumerate(self.shapes):
            gk = self.weights[:, k:k + 1] * g
            out.append((self.sample_mats[k].T @ gk).reshape(h, w, 4))
        return out

    def fallback_fill(self, colors: np.ndarray) -> np.ndarray:
        """Diffuse colors from covered vertices into uncovered ones."""
        c = colors.copy()
        m = self.covered.astype(np.float64)
        known = self.covered.copy()
        for _ in range(DIFFUSION_ITERS):
            num = self.adjacency @ (c * m[:, None])
            den = self.adjacency @ m
            upd = (~self.covered) & (den > 0)
            if upd.any():
                c[upd] = num[upd] / den[upd, None]
            known |= den > 0
            m = known.astype(np.float64)
        c[:, 3] = 1.0
        return c


def _bilinear_sampler(px, py, valid, h, w) -> sp.csr_matrix:
    """Sparse (V, H*W) matrix sampling an image at (px, py) pixel centers."""
    V = len(px)
    x = px - 0.5
    y = py - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    rows, cols, vals = [], [], []
    for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = valid & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        rows.append(np.nonzero(ok)[0])
        cols.append((yi[ok] * w + xi[ok]))
        vals.append(wt[ok])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V, h * w),
    )


def build_cache(mesh: Mesh, views: list, cos_threshold: float = DEFAULT_COS_THRESHOLD,
                extra_view_weight: np.ndarray | None = None) -> UnprojectCache:
    """Precompute weights and samplers for a fixed mesh and camera set.

    extra_view_weight: optional per-view multiplier (K,) applied before
    normalization (used to let the input view dominate in the final
    unprojection).
    """
    if not views:
        raise UnprojectError("views must be nonempty")
    V = mesh.n_vertices
    normals = vertex_normals(mesh)
    K = len(views)
    weights = np.zeros((V, K))
    mats, shapes = [], []
    for k, pv in enumerate(views):
        cam = pv.camera
        h, w = pv.image.height, pv.image.width
        hard = rasterize(mesh, cam)
        proj = project_points(mesh.vertices, cam)
        to_cam = cam.position()[None, :] - mesh.vertices
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-300)
        cosw = np.einsum("ij,ij->i", normals, to_cam)
        wk = np.where(cosw >= cos_threshold, cosw, 0.0)

        px, py, vz = proj[:, 0], proj[:, 1], proj[:, 2]
        inside = (vz > 0) & (px >= 0.5) & (px <= w - 0.5) & (py >= 0.5) & (py <= h - 0.5)

        # occlusion: vertex depth vs the farthest covered z-buffer tap in a
        # 3x3 neighborhood (most-permissive tap absorbs the per-pixel depth
        # slope of oblique faces, which dwarfs eps)
        eps = DEPTH_EPS_SCALE * hard.depth_range()
        xi = np.clip(px.astype(np.int64), 0, w - 1)
        yi = np.clip(py.astype(np.int64), 0, h - 1)
        dmax = np.full(V, -np.inf)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                xs = np.clip(xi + dx, 0, w - 1)
                ys = np.clip(yi + dy, 0, h - 1)
                tap = hard.depth[ys, xs]
                dmax = np.maximum(dmax, np.where(np.isfinite(tap), tap, -np.inf))
        visible = inside & np.isfinite(dmax) & (vz <= dmax + eps)

        mat = _bilinear_sampler(px, py, visible, h, w)
        alpha = np.asarray(mat @ pv.image.pixels.reshape(-1, 4))[:, 3]
        wk = np.where(visible & (alpha >= 0.5), wk, 0.0)
        if extra_view_weight is not None:
            wk = wk * extra_view_weight[k]
        weights[:, k] = wk
        mats.append(mat)
        shapes.append((h, w))

    wsum = weights.sum(axis=1)
    covered = wsum > 0
    if not covered.any():
        raise UnprojectError("no view covers the mesh")

    e = mesh.edges_unique()
    ones = np.ones(len(e))
    adj = sp.coo_matrix((ones, (e[:, 0], e[:, 1])), shape=(V, V))
    adj = (adj + adj.T).tocsr()
    return UnprojectCache(weights=weights, wsum=wsum, sample_mats=mats,
                          shapes=shapes, covered=covered, adjacency=adj)


def unproject(mesh: Mesh, views: list, cos_threshold: float = DEFAULT_COS_THRESHOLD,
              extra_view_weight: np.ndarray | None = None) -> Mesh:
    """Color a mesh from posed images. Returns a new mesh with RGBA colors."""
    cache = build_cache(mesh, views, cos_threshold, extra_view_weight)
    colors = cache.apply([pv.image for pv in views])
    colors = cache.fallback_fill(colors)
    return mesh.with_colors(np.clip(colors, 0.0, 1.0))


def unproject_backward(mesh: Mesh, views: list, grad_colors: np.ndarray,
                       cos_threshold: float = DEFAULT_COS_THRESHOLD) -> list:
    """Per-view image gradients for upstream per-vertex color gradients."""
    cache = build_cache(mesh, views, cos_threshold)
    return cache.apply_adjoint(grad_colors)
