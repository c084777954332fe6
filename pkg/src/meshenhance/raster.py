"""Software rasterizer with a gradient contract.

Hard mode: z-buffered rasterization with perspective-correct barycentric
interpolation of vertex colors; gradients with respect to vertex colors are
exact (the color path is linear).

Soft mode: per-pixel alpha is a sigmoid of the signed squared screen-space
distance to the nearest visible silhouette edge (sharpness sigma, in px).
Outside the hard coverage, pixels within a 4 px band get RGB aggregated from
nearby silhouette edges with a depth-softmax weight (temperature gamma);
covered pixels keep their hard RGB. Position gradients flow through the
sigmoid chain and, for covered pixels, through the barycentric color chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .camera import Camera, project_points
from .image import ImageRGBA
from .mesh import Mesh, vertex_normals

SOFT_BAND_PX = 4.0
DEFAULT_SIGMA = 1.0


def default_gamma(depth_range: float) -> float:
    return 1e-2 * max(depth_range, 1e-6)


class RenderError(ValueError):
    pass


@dataclass
class RenderOutput:
    image: ImageRGBA
    depth: np.ndarray  # (H,W), +inf where alpha == 0 in hard mode
    face_id: np.ndarray | None  # (H,W) int, -1 where uncovered


@dataclass
class HardRaster:
    """Per-pixel rasterization state for a fixed mesh/camera pair."""

    camera: Camera
    proj: np.ndarray          # (V,3) pixel x, pixel y, depth
    face_id: np.ndarray       # (H,W) int64, -1 uncovered
    bary_persp: np.ndarray    # (H,W,3) perspective-correct weights
    bary_screen: np.ndarray   # (H,W,3) screen-space weights
    depth: np.ndarray         # (H,W), +inf uncovered
    cover: np.ndarray         # (H,W) bool
    faces: np.ndarray         # (T,3) vertex ids (copy of mesh.faces)
    _color_matrix: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.face_id.shape

    def depth_range(self) -> float:
        if not self.cover.any():
            return 1.0
        d = self.depth[self.cover]
        return float(max(d.max() - d.min(), 1e-6))

    def color_matrix(self) -> sp.csr_matrix:
        """Sparse (H*W, V) map from per-vertex values to covered pixels."""
        if self._color_matrix is None:
            h, w = self.shape
            ys, xs = np.nonzero(self.cover)
            pix = ys * w + xs
            f = self.face_id[ys, xs]
            rows = np.repeat(pix, 3)
            cols = self.faces[f].ravel()
            vals = self.bary_persp[ys, xs].ravel()
            nverts = self.proj.shape[0]
            self._color_matrix = sp.csr_matrix(
                (vals, (rows, cols)), shape=(h * w, nverts)
            )
        return self._color_matrix

    def shade(self, vertex_values: np.ndarray) -> np.ndarray:
        """Interpolate per-vertex values (V,C) over covered pixels -> (H,W,C)."""
        h, w = self.shape
        vals = np.asarray(vertex_values, dtype=np.float64)
        out = self.color_matrix() @ vals.reshape(len(vals), -1)
        return out.reshape(h, w, -1)

    def shade_adjoint(self, grad_pixels: np.ndarray) -> np.ndarray:
        """Adjoint of shade: (H,W,C) pixel grads -> (V,C) vertex-value grads."""
        h, w = self.shape
        g = grad_pixels.reshape(h * w, -1)
        return self.color_matrix().T @ g


def rasterize(mesh: Mesh, camera: Camera) -> HardRaster:
    """Z-buffered hard rasterization. Deterministic (ties broken by face id)."""
    w_img, h_img = camera.width, camera.height
    proj = project_points(mesh.vertices, camera) if mesh.n_vertices else np.zeros((0, 3))
    face_id = np.full((h_img, w_img), -1, dtype=np.int64)
    bary_p = np.zeros((h_img, w_img, 3))
    bary_s = np.zeros((h_img, w_img, 3))
    depth = np.full((h_img, w_img), np.inf)
    raster = HardRaster(
        camera=camera, proj=proj, face_id=face_id, bary_persp=bary_p,
        bary_screen=bary_s, depth=depth, cover=np.zeros((h_img, w_img), bool),
        faces=mesh.faces.copy(),
    )
    if mesh.n_faces == 0:
        return raster

    tri = mesh.faces
    near = 1e-6 * camera.distance
    zv = proj[:, 2]
    valid = (zv[tri] > near).all(axis=1)
    fidx = np.nonzero(valid)[0]
    if len(fidx) == 0:
        return raster

    s = proj[:, :2]
    a, b, c = s[tri[fidx, 0]], s[tri[fidx, 1]], s[tri[fidx, 2]]
    xmin = np.clip(np.floor(np.minimum(np.minimum(a[:, 0], b[:, 0]), c[:, 0]) - 0.5), 0, w_img - 1).astype(np.int64)
    xmax = np.clip(np.ceil(np.maximum(np.maximum(a[:, 0], b[:, 0]), c[:, 0]) + 0.5), 0, w_img - 1).astype(np.int64)
    ymin = np.clip(np.floor(np.minimum(np.minimum(a[:, 1], b[:, 1]), c[:, 1]) - 0.5), 0, h_img - 1).astype(np.int64)
    ymax = np.clip(np.ceil(np.maximum(np.maximum(a[:, 1], b[:, 1]), c[:, 1]) + 0.5), 0, h_img - 1).astype(np.int64)
    bw = xmax - xmin + 1
    bh = ymax - ymin + 1
    onscreen = (bw > 0) & (bh > 0)
    # faces whose bbox misses the screen still produce 1x1 boxes after the
    # clip above; drop those whose real extent is outside
    offscreen = (
        (np.maximum(np.maximum(a[:, 0], b[:, 0]), c[:, 0]) < 0)
        | (np.minimum(np.minimum(a[:, 0], b[:, 0]), c[:, 0]) > w_img)
        | (np.maximum(np.maximum(a[:, 1], b[:, 1]), c[:, 1]) < 0)
        | (np.minimum(np.minimum(a[:, 1], b[:, 1]), c[:, 1]) > h_img)
    )
    onscreen &= ~offscreen
    fidx, xmin, ymin, bw, bh = fidx[onscreen], xmin[onscreen], ymin[onscreen], bw[onscreen], bh[onscreen]
    if len(fidx) == 0:
        return raster

    counts = bw * bh
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(fidx)), counts)  # candidate -> local face
    k = np.arange(total) - offsets[owner]
    px = xmin[owner] + k % bw[owner]
    py = ymin[owner] + k // bw[owner]
    pcx = px + 0.5
    pcy = py + 0.5

    gf = fidx[owner]  # global face ids
    va, vb, vc = tri[gf, 0], tri[gf, 1], tri[gf, 2]
    ax, ay = s[va, 0], s[va, 1]
    bx, by = s[vb, 0], s[vb, 1]
    cx, cy = s[vc, 0], s[vc, 1]

    w0 = (cx - bx) * (pcy - by) - (cy - by) * (pcx - bx)
    w1 = (ax - cx) * (pcy - cy) - (ay - cy) * (pcx - cx)
    w2 = (bx - ax) * (pcy - ay) - (by - ay) * (pcx - ax)
    W = w0 + w1 + w2
    inside = (np.abs(W) > 1e-14) & (w0 * W >= 0) & (w1 * W >= 0) & (w2 * W >= 0)
    if not inside.any():
        return raster

    w0, w1, w2, W = w0[inside], w1[inside], w2[inside], W[inside]
    gf = gf[inside]
    px, py = px[inside], py[inside]
    l0, l1, l2 = w0 / W, w1 / W, w2 / W
    z0, z1, z2 = zv[tri[gf, 0]], zv[tri[gf, 1]], zv[tri[gf, 2]]
    u0, u1, u2 = l0 / z0, l1 / z1, l2 / z2
    S = u0 + u1 + u2
    zp = 1.0 / S

    pix = py * w_img + px
    order = np.lexsort((gf, zp, pix))
    pix_o = pix[order]
    first = np.ones(len(order), bool)
    first[1:] = pix_o[1:] != pix_o[:-1]
    sel = order[first]

    ys, xs = pix[sel] // w_img, pix[sel] % w_img
    raster.face_id[ys, xs] = gf[sel]
    raster.depth[ys, xs] = zp[sel]
    raster.cover[ys, xs] = True
    raster.bary_screen[ys, xs, 0] = l0[sel]
    raster.bary_screen[ys, xs, 1] = l1[sel]
    raster.bary_screen[ys, xs, 2] = l2[sel]
    raster.bary_persp[ys, xs, 0] = (u0 / S)[sel]
    raster.bary_persp[ys, xs, 1] = (u1 / S)[sel]
    raster.bary_persp[ys, xs, 2] = (u2 / S)[sel]
    return raster


# ---------------------------------------------------------------------------
# Silhouette extraction and the soft band


@dataclass
class SoftCache:
    hard: HardRaster
    sigma: float
    gamma: float
    seg_v0: np.ndarray        # (S,) vertex id of segment start
    seg_v1: np.ndarray        # (S,)
    dist: np.ndarray          # (H,W) distance to nearest segment (inf outside band)
    seg_of: np.ndarray        # (H,W) nearest segment index, -1 outside band
    t_of: np.ndarray          # (H,W) closest-point parameter along nearest segment
    alpha: np.ndarray         # (H,W) soft alpha
    band: np.ndarray          # (H,W) bool, pixels inside the 4 px band
    # uncovered-band color aggregation state (per segment contributions are
    # recomputed in the backward pass with the same loop)
    wsum: np.ndarray          # (H,W)
    zmin: float


def _edge_face_table(faces: np.ndarray):
    """Unique undirected edges with up to two adjacent faces (-1 if none)."""
    T = len(faces)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0)
    owner = np.tile(np.arange(T), 3)
    e_sorted = np.sort(e, axis=1)
    order = np.lexsort((e_sorted[:, 1], e_sorted[:, 0]))
    es, fo = e_sorted[order], owner[order]
    new = np.ones(len(es), bool)
    new[1:] = np.any(es[1:] != es[:-1], axis=1)
    group = np.cumsum(new) - 1
    n_edges = group[-1] + 1 if len(group) else 0
    edges = es[new]
    f1 = np.full(n_edges, -1, dtype=np.int64)
    firsts = np.nonzero(new)[0]
    f0 = fo[firsts]
    second = firsts + 1
    has2 = second < len(fo)
    grp = np.nonzero(has2)[0]
    same = ~new[second[has2]]  # second row still belongs to the same edge
    f1[grp[same]] = fo[second[has2][same]]
    return edges, f0, f1


def silhouette_edges(mesh: Mesh, camera: Camera, hard: HardRaster,
                     visibility_filter: bool = True):
    """Screen-space silhouette segments as (v0, v1) vertex-id arrays.

    A mesh edge is a silhouette edge if it is a boundary edge or its two
    adjacent faces have opposite screen-space orientation. Occluded segments
    are dropped by sampling their depth against the z-buffer.
    """
    edges, f0, f1 = _edge_face_table(mesh.faces)
    if len(edges) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    s = hard.proj[:, :2]
    tri = mesh.faces
    a, b, c = s[tri[:, 0]], s[tri[:, 1]], s[tri[:, 2]]
    orient = np.sign((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                     - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    o0 = np.where(f0 >= 0, orient[np.maximum(f0, 0)], 0.0)
    o1 = np.where(f1 >= 0, orient[np.maximum(f1, 0)], 0.0)
    is_sil = (f1 < 0) | (o0 * o1 <= 0)
    v0, v1 = edges[is_sil, 0], edges[is_sil, 1]

    # drop segments behind the camera
    zv = hard.proj[:, 2]
    infront = (zv[v0] > 0) & (zv[v1] > 0)
    v0, v1 = v0[infront], v1[infront]
    if not visibility_filter or len(v0) == 0:
        return v0, v1

    h_img, w_img = hard.shape
    eps = 1e-3 * hard.depth_range()
    keep = np.zeros(len(v0), bool)
    p0, p1 = mesh.vertices[v0], mesh.vertices[v1]
    for t in (0.25, 0.5, 0.75):
        pts = (1 - t) * p0 + t * p1
        pr = project_points(pts, camera)
        xs = np.clip(pr[:, 0].astype(np.int64), 0, w_img - 1)
        ys = np.clip(pr[:, 1].astype(np.int64), 0, h_img - 1)
        buf = hard.depth[ys, xs]
        keep |= pr[:, 2] <= buf + eps
        # pixels right at the silhouette may be uncovered; treat inf as visible
        keep |= ~np.isfinite(buf)
    return v0[keep], v1[keep]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def soft_forward(mesh: Mesh, camera: Camera, colors: np.ndarray | None,
                 sigma: float = DEFAULT_SIGMA, gamma: float | None = None):
    """Soft render. Returns (RenderOutput, SoftCache)."""
    hard = rasterize(mesh, camera)
    h_img, w_img = hard.shape
    if gamma is None:
        gamma = default_gamma(hard.depth_range())
    v0, v1 = silhouette_edges(mesh, camera, hard)
    nseg = len(v0)

    dist = np.full((h_img, w_img), np.inf)
    seg_of = np.full((h_img, w_img), -1, np.int64)
    t_of = np.zeros((h_img, w_img))
    wsum = np.zeros((h_img, w_img))
    csum = np.zeros((h_img, w_img, 4))
    zmin = float(hard.depth[hard.cover].min()) if hard.cover.any() else 0.0

    s2 = hard.proj[:, :2]
    zv = hard.proj[:, 2]
    pad = SOFT_BAND_PX + 1.0
    for si in range(nseg):
        i0, i1 = v0[si], v1[si]
        a, b = s2[i0], s2[i1]
        x0 = max(int(np.floor(min(a[0], b[0]) - pad)), 0)
        x1 = min(int(np.ceil(max(a[0], b[0]) + pad)), w_img - 1)
        y0 = max(int(np.floor(min(a[1], b[1]) - pad)), 0)
        y1 = min(int(np.ceil(max(a[1], b[1]) + pad)), h_img - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1) + 0.5,
                             np.arange(y0, y1 + 1) + 0.5)
        e = b - a
        ee = max(float(e @ e), 1e-300)
        vx, vy = gx - a[0], gy - a[1]
        t = np.clip((vx * e[0] + vy * e[1]) / ee, 0.0, 1.0)
        dx, dy = vx - t * e[0], vy - t * e[1]
        d = np.sqrt(dx * dx + dy * dy)
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        better = d < dist[sl]
        dist[sl][better] = d[better]
        seg_of[sl] = np.where(better, si, seg_of[sl])
        t_of[sl] = np.where(better, t, t_of[sl])
        if colors is not None:
            inband = (d <= SOFT_BAND_PX) & ~hard.cover[sl]
            if inband.any():
                zseg = (1 - t) * zv[i0] + t * zv[i1]
                wgt = np.exp(-(d * d) / sigma) * np.exp(-(zseg - zmin) / gamma)
                wgt = np.where(inband, wgt, 0.0)
                cseg = ((1 - t)[:, :, None] * colors[i0][None, None, :]
                        + t[:, :, None] * colors[i1][None, None, :])
                wsum[sl] += wgt
                csum[sl] += wgt[:, :, None] * cseg

    band = dist <= SOFT_BAND_PX
    sign = np.where(hard.cover, 1.0, -1.0)
    alpha = np.where(hard.cover, 1.0, 0.0)
    if band.any():
        alpha[band] = _sigmoid(sign[band] * dist[band] ** 2 / sigma)

    pixels = np.zeros((h_img, w_img, 4))
    if colors is not None:
        if colors.shape != (mesh.n_vertices, 4):
            raise RenderError("mesh has no per-vertex RGBA colors")
        shaded = hard.shade(colors)
        pixels[hard.cover, :3] = shaded[hard.cover, :3]
        fill = band & ~hard.cover & (wsum > 0)
        pixels[fill, :3] = csum[fill, :3] / wsum[fill][:, None]
    pixels[:, :, 3] = alpha

    out = RenderOutput(image=ImageRGBA(np.clip(pixels, 0.0, 1.0)),
                       depth=hard.depth, face_id=hard.face_id)
    cache = SoftCache(hard=hard, sigma=sigma, gamma=gamma, seg_v0=v0, seg_v1=v1,
                      dist=dist, seg_of=seg_of, t_of=t_of, alpha=alpha,
                      band=band, wsum=wsum, zmin=zmin)
    return out, cache


def _projection_jacobians(camera: Camera, vertices: np.ndarray, vids: np.ndarray):
    """d(pixel x)/dX, d(pixel y)/dX, d(depth)/dX for the given vertex ids."""
    right, up, forward = camera.basis()
    cam = camera.world_to_cam(vertices[vids])
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    f = camera.focal_px
    jx = (f / z)[:, None] * right[None, :] - (f * x / z ** 2)[:, None] * forward[None, :]
    jy = (f / z)[:, None] * (-up)[None, :] - (f * y / z ** 2)[:, None] * forward[None, :]
    jz = np.broadcast_to(forward, jx.shape)
    return jx, jy, jz


def soft_backward(mesh: Mesh, colors: np.ndarray | None, cache: SoftCache,
                  grad_pixels: np.ndarray):
    """Gradients of the soft render wrt vertex colors and vertex positions.

    Color gradients are the exact adjoint of the forward color chains.
    Position gradients flow through the silhouette sigmoid (alpha channel)
    and through the barycentric color interpolation on covered pixels; the
    nearest-segment assignment and the aggregation weights are treated as
    locally constant.
    """
    hard = cache.hard
    camera = hard.camera
    h_img, w_img = hard.shape
    grad_pixels = np.asarray(grad_pixels, dtype=np.float64)
    grad_colors = np.zeros((mesh.n_vertices, 4))
    grad_pos = np.zeros((mesh.n_vertices, 3))

    # ---- colors: covered pixels (linear shade chain)
    cov_rgb_grad = np.where(hard.cover[:, :, None], grad_pixels[:, :, :3], 0.0)
    grad_colors[:, :3] += hard.shade_adjoint(cov_rgb_grad)[:, :3]

    # ---- colors: uncovered band pixels (re-run the aggregation loop)
    s2 = hard.proj[:, :2]
    zv = hard.proj[:, 2]
    pad = SOFT_BAND_PX + 1.0
    safe_wsum = np.where(cache.wsum > 0, cache.wsum, 1.0)
    if colors is not None:
        for si in range(len(cache.seg_v0)):
            i0, i1 = cache.seg_v0[si], cache.seg_v1[si]
            a, b = s2[i0], s2[i1]
            x0 = max(int(np.floor(min(a[0], b[0]) - pad)), 0)
            x1 = min(int(np.ceil(max(a[0], b[0]) + pad)), w_img - 1)
            y0 = max(int(np.floor(min(a[1], b[1]) - pad)), 0)
            y1 = min(int(np.ceil(max(a[1], b[1]) + pad)), h_img - 1)
            if x1 < x0 or y1 < y0:
                continue
            gx, gy = np.meshgrid(np.arange(x0, x1 + 1) + 0.5,
                                 np.arange(y0, y1 + 1) + 0.5)
            e = b - a
            ee = max(float(e @ e), 1e-300)
            vx, vy = gx - a[0], gy - a[1]
            t = np.clip((vx * e[0] + vy * e[1]) / ee, 0.0, 1.0)
            dx, dy = vx - t * e[0], vy - t * e[1]
            d2 = dx * dx + dy * dy
            sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
            inband = (np.sqrt(d2) <= SOFT_BAND_PX) & ~hard.cover[sl]
            if not inband.any():
                continue
            zseg = (1 - t) * zv[i0] + t * zv[i1]
            wgt = np.exp(-d2 / cache.sigma) * np.exp(-(zseg - cache.zmin) / cache.gamma)
            wgt = np.where(inband & (cache.wsum[sl] > 0), wgt, 0.0)
            frac = wgt / safe_wsum[sl]
            g_here = grad_pixels[sl][:, :, :3] * frac[:, :, None]
            g0 = (g_here * (1 - t)[:, :, None]).sum(axis=(0, 1))
            g1 = (g_here * t[:, :, None]).sum(axis=(0, 1))
            grad_colors[i0, :3] += g0
            grad_colors[i1, :3] += g1

    # ---- positions: alpha sigmoid chain over the band
    ys, xs = np.nonzero(cache.band & (cache.seg_of >= 0))
    if len(ys):
        ga = grad_pixels[ys, xs, 3]
        al = cache.alpha[ys, xs]
        sgn = np.where(hard.cover[ys, xs], 1.0, -1.0)
        gd2 = ga * al * (1.0 - al) * sgn / cache.sigma  # d alpha / d (dist^2)
        si = cache.seg_of[ys, xs]
        t = cache.t_of[ys, xs]
        i0, i1 = cache.seg_v0[si], cache.seg_v1[si]
        a, b = s2[i0], s2[i1]
        p = np.stack([xs + 0.5, ys + 0.5], axis=1).astype(np.float64)
        q = (1 - t)[:, None] * a + t[:, None] * b
        pq = p - q
        # interior t: p-q is orthogonal to the edge so the clamp introduces
        # no extra term; clamped t: all mass goes to the nearer endpoint
        g_a2d = -2.0 * pq * (1 - t)[:, None] * gd2[:, None]
        g_b2d = -2.0 * pq * t[:, None] * gd2[:, None]

        for vid_arr, g2d in ((i0, g_a2d), (i1, g_b2d)):
            jx, jy, _ = _projection_jacobians(camera, mesh.vertices, vid_arr)
            g3 = g2d[:, 0:1] * jx + g2d[:, 1:2] * jy
            np.add.at(grad_pos, vid_arr, g3)

    # ---- positions: covered-pixel barycentric color chain
    if colors is not None:
        ys, xs = np.nonzero(hard.cover)
        g_rgb = grad_pixels[ys, xs, :3]
        active = np.abs(g_rgb).sum(axis=1) > 0
        ys, xs, g_rgb = ys[active], xs[active], g_rgb[active]
        if len(ys):
            f = hard.face_id[ys, xs]
            vid = hard.faces[f]                      # (N,3)
            sv = s2[vid]                             # (N,3,2)
            z = zv[vid]                              # (N,3)
            lam = hard.bary_screen[ys, xs]           # (N,3)
            c_rgb = colors[vid][:, :, :3]            # (N,3,3)

            u = lam / z
            S = u.sum(axis=1, keepdims=True)
            g_lamp = np.einsum("nc,nic->ni", g_rgb, c_rgb)
            gu = g_lamp / S - (g_lamp * u).sum(axis=1, keepdims=True) / S ** 2
            g_lam = gu / z
            g_z = -gu * lam / z ** 2
            # lam_j = w_j / W with W = sum_k w_k:
            # d lam_j / d w_k = (delta_jk - lam_j) / W
            g_w = g_lam - (g_lam * lam).sum(axis=1, keepdims=True)
            pa, pb, pc = sv[:, 0], sv[:, 1], sv[:, 2]
            W_act = ((pb[:, 0] - pa[:, 0]) * (pc[:, 1] - pa[:, 1])
                     - (pb[:, 1] - pa[:, 1]) * (pc[:, 0] - pa[:, 0]))
            g_w = g_w / W_act[:, None]

            p = np.stack([xs + 0.5, ys + 0.5], axis=1).astype(np.float64)
            g2d = np.zeros((len(ys), 3, 2))
            for i in range(3):
                j, kk = (i + 1) % 3, (i + 2) % 3
                vj, vk = sv[:, j], sv[:, kk]
                # d w_i / d v_j and d w_i / d v_k
                g2d[:, j, 0] += g_w[:, i] * (vk[:, 1] - p[:, 1])
                g2d[:, j, 1] += g_w[:, i] * (p[:, 0] - vk[:, 0])
                g2d[:, kk, 0] += g_w[:, i] * (p[:, 1] - vj[:, 1])
                g2d[:, kk, 1] += g_w[:, i] * (vj[:, 0] - p[:, 0])

            for i in range(3):
                vids = vid[:, i]
                jx, jy, jz = _projection_jacobians(camera, mesh.vertices, vids)
                g3 = (g2d[:, i, 0:1] * jx + g2d[:, i, 1:2] * jy
                      + g_z[:, i:i + 1] * jz)
                np.add.at(grad_pos, vids, g3)

    return grad_colors, grad_pos


# ---------------------------------------------------------------------------
# Public API


def render(mesh: Mesh, camera: Camera, mode: str = "hard",
           colors: np.ndarray | None = None, sigma: float = DEFAULT_SIGMA,
           gamma: float | None = None, require_colors: bool = True) -> RenderOutput:
    """Render a colored mesh. mode='hard' or 'soft'."""
    if colors is None:
        colors = mesh.colors
    if colors is None and require_colors and mesh.n_faces > 0:
        raise RenderError("mesh has no colors; cannot render RGB output")
    if mode == "soft":
        out, _ = soft_forward(mesh, camera, colors, sigma=sigma, gamma=gamma)
        return out
    if mode != "hard":
        raise ValueError(f"unknown render mode {mode!r}")
    hard = rasterize(mesh, camera)
    h, w = hard.shape
    pixels = np.zeros((h, w, 4))
    if colors is not None and hard.cover.any():
        shaded = hard.shade(colors)
        pixels[hard.cover, :3] = np.clip(shaded[hard.cover, :3], 0.0, 1.0)
    pixels[:, :, 3] = hard.cover.astype(np.float64)
    return RenderOutput(image=ImageRGBA(pixels), depth=hard.depth, face_id=hard.face_id)


def render_backward(mesh: Mesh, camera: Camera, mode: str,
                    grad_pixels: np.ndarray, colors: np.ndarray | None = None,
                    sigma: float = DEFAULT_SIGMA, gamma: float | None = None,
                    need_position_grads: bool | None = None):
    """Gradients of render() wrt (vertex colors, vertex positions).

    Hard mode supports color gradients only; asking for position gradients
    raises. Soft mode returns both.
    """
    if colors is None:
        colors = mesh.colors
    if mode == "hard":
        if need_position_grads:
            raise RenderError("position gradients are only defined in soft mode")
        hard = rasterize(mesh, camera)
        grad_colors = np.zeros((mesh.n_vertices, 4))
        g_rgb = np.where(hard.cover[:, :, None],
                         np.asarray(grad_pixels, dtype=np.float64)[:, :, :3], 0.0)
        grad_colors[:, :3] = hard.shade_adjoint(g_rgb)[:, :3]
        return grad_colors, None
    if mode != "soft":
        raise ValueError(f"unknown render mode {mode!r}")
    _, cache = soft_forward(mesh, camera, colors, sigma=sigma, gamma=gamma)
    return soft_backward(mesh, colors, cache, grad_pixels)


def render_normal_map(mesh: Mesh, camera: Camera) -> RenderOutput:
    """Camera-space normals encoded RGB = (n+1)/2; alpha = coverage."""
    vn = vertex_normals(mesh)
    right, up, forward = camera.basis()
    n_cam = np.stack([vn @ right, vn @ up, -(vn @ forward)], axis=1)
    hard = rasterize(mesh, camera)
    h, w = hard.shape
    pixels = np.zeros((h, w, 4))
    if hard.cover.any():
        shaded = hard.shade(n_cam)
        lens = np.linalg.norm(shaded, axis=2, keepdims=True)
        lens[lens == 0] = 1.0
        enc = (shaded / lens + 1.0) / 2.0
        pixels[hard.cover, :3] = enc[hard.cover]
    pixels[:, :, 3] = hard.cover.astype(np.float64)
    return RenderOutput(image=ImageRGBA(np.clip(pixels, 0, 1)),
                        depth=hard.depth, face_id=hard.face_id)


def normal_colors(mesh: Mesh, camera: Camera) -> np.ndarray:
    """Per-vertex encoded camera-space normals as RGBA colors in [0,1]."""
    vn = vertex_normals(mesh)
    right, up, forward = camera.basis()
    n_cam = np.stack([vn @ right, vn @ up, -(vn @ forward)], axis=1)
    rgba = np.empty((mesh.n_vertices, 4))
    rgba[:, :3] = np.clip((n_cam + 1.0) / 2.0, 0.0, 1.0)
    rgba[:, 3] = 1.0
    return rgba
