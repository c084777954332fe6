"""Synthetic test scenarios with ground truth known by construction.

Stands in for the diffusion/LRM initialization stage: procedural colored
meshes, the six default posed views, controlled multiview misalignment,
degraded initial meshes, and a mismatched input image. Everything is a pure
function of (name, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import deform2d
from .camera import Camera
from .image import ImageRGBA, load_png, save_png
from .mesh import Mesh, load_ply, save_ply
from .raster import render, render_normal_map
from .unproject import PosedImage

DEFAULT_ELEVATIONS = [20.0, -10.0, 20.0, -10.0, 20.0, -10.0]
DEFAULT_AZIMUTHS = [30.0, 90.0, 150.0, 210.0, 270.0, 330.0]
DEFAULT_FOV = 30.0
DEFAULT_DISTANCE = 4.0
DEFAULT_RESOLUTION = 256


def default_cameras(resolution=DEFAULT_RESOLUTION):
    return [
        Camera(fov_deg=DEFAULT_FOV, distance=DEFAULT_DISTANCE, elevation_deg=el,
               azimuth_deg=az, resolution=(resolution, resolution))
        for el, az in zip(DEFAULT_ELEVATIONS, DEFAULT_AZIMUTHS)
    ]


# ---------------------------------------------------------------------------
# Procedural shapes


def icosphere(subdivisions: int = 3) -> Mesh:
    """Unit icosphere; vertex count 10 * 4**s + 2."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        verts_l = list(verts)
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts_l[i] + verts_l[j]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_l)
                verts_l.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_l)
        faces = np.array(new_faces, dtype=np.int64)
    return Mesh(verts, faces)


def torus(n_major: int = 48, n_minor: int = 24, R: float = 0.7, r: float = 0.3) -> Mesh:
    u = np.arange(n_major) * (2 * np.pi / n_major)
    v = np.arange(n_minor) * (2 * np.pi / n_minor)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (R + r * np.cos(vv)) * np.cos(uu)
    y = (R + r * np.cos(vv)) * np.sin(uu)
    z = r * np.sin(vv)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [[a, b, c], [a, c, d]]
    return Mesh(verts, np.array(faces, dtype=np.int64))


def cube_mesh(n: int = 8) -> Mesh:
    """Subdivided cube surface with welded vertices."""
    verts, faces = [], []
    index = {}

    def vid(p):
        key = tuple(np.round(p, 9))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    lin = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        for s in (-1.0, 1.0):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = s
                        p[(axis + 1) % 3] = lin[i + di]
                        p[(axis + 2) % 3] = lin[j + dj]
                        quad.append(vid(p))
                    a, b, c, d = quad
                    if s > 0:
                        faces += [[a, b, c], [a, c, d]]
                    else:
                        faces += [[a, c, b], [a, d, c]]
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64))


def _smooth_radial_bump(points: np.ndarray, rng: np.random.Generator,
                        n_waves: int = 4,
                        freq_range: tuple = (1.0, 2.5)) -> np.ndarray:
    """Smooth low-frequency scalar field over points, roughly in [-1, 1]."""
    out = np.zeros(len(points))
    for _ in range(n_waves):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        freq = rng.uniform(*freq_range)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.sin(freq * (points @ d) * np.pi + phase)
    return out / n_waves


def blob(subdivisions: int = 3, seed: int = 0, amplitude: float = 0.25) -> Mesh:
    base = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    bump = _smooth_radial_bump(base.vertices, rng)
    verts = base.vertices * (1.0 + amplitude * bump)[:, None]
    return Mesh(verts, base.faces)


def normalize_unit_box(mesh: Mesh) -> Mesh:
    lo, hi = mesh.bbox()
    center = (lo + hi) / 2.0
    half = np.max(hi - lo) / 2.0
    return mesh.with_vertices((mesh.vertices - center) / max(half, 1e-12))


# ---------------------------------------------------------------------------
# Color patterns


def color_pattern(mesh: Mesh, pattern: str, seed: int = 0) -> np.ndarray:
    p = mesh.vertices
    V = len(p)
    rgba = np.ones((V, 4))
    if pattern == "checker":
        cells = np.floor((p + 1.0) * 2.0).astype(np.int64)
        parity = cells.sum(axis=1) % 2
        rgba[:, 0] = np.where(parity, 0.9, 0.1)
        rgba[:, 1] = np.where(parity, 0.2, 0.7)
        rgba[:, 2] = np.where(parity, 0.1, 0.9)
    elif pattern == "gradient":
        rgba[:, :3] = (p + 1.0) / 2.0
    elif pattern == "spots":
        rng = np.random.default_rng(seed)
        base = np.array([0.85, 0.85, 0.8])
        rgba[:, :3] = base
        for _ in range(12):
            center = rng.normal(size=3)
            center /= np.linalg.norm(center)
            col = rng.uniform(0.05, 0.95, size=3)
            d2 = np.sum((p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), 1e-9)
                         - center) ** 2, axis=1)
            fall = np.exp(-d2 / 0.08)
            rgba[:, :3] = rgba[:, :3] * (1 - fall[:, None]) + col[None, :] * fall[:, None]
    else:
        raise ValueError(f"unknown color pattern {pattern!r}")
    return np.clip(rgba, 0.0, 1.0)


def make_gt_mesh(shape: str, subdivisions: int = 3, color_pattern_name: str = "gradient",
                 seed: int = 0) -> Mesh:
    if subdivisions > 6:
        raise ValueError("subdivisions must be <= 6")
    if shape == "sphere":
        m = icosphere(subdivisions)
    elif shape == "torus":
        n = 12 * 2 ** min(subdivisions, 3)
        m = torus(n_major=n, n_minor=max(n // 2, 6))
    elif shape == "blob":
        m = blob(subdivisions, seed)
    elif shape == "cube":
        m = cube_mesh(n=4 * 2 ** min(subdivisions, 3))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    m = normalize_unit_box(m)
    return m.with_colors(color_pattern(m, color_pattern_name, seed))


# ---------------------------------------------------------------------------
# Views


def render_views(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION) -> list:
    return [PosedImage(render(mesh, cam, mode="hard").image, cam)
            for cam in default_cameras(resolution)]


def render_normal_views(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION) -> list:
    return [PosedImage(render_normal_map(mesh, cam).image, cam)
            for cam in default_cameras(resolution)]


PERTURB_GRID = 5  # coarse injection grid -> coherent low-frequency misalignment


def random_smooth_field(grid_size: int, max_offset_px: float,
                        rng: np.random.Generator) -> deform2d.DeformationField2D:
    """Uniform offsets in [-max, max], one 4-neighbor averaging pass.

    The unit field is sampled first and scaled by max_offset_px afterwards,
    so for a fixed rng state the field grows linearly with the magnitude.
    """
    off = rng.uniform(-1.0, 1.0, size=(grid_size, grid_size, 2))
    # average each cell with its in-bounds 4-neighbors (border cells use the
    # neighbors they have, so the whole field is low-frequency)
    pad = np.pad(off, ((1, 1), (1, 1), (0, 0)))
    cnt = np.pad(np.ones(off.shape[:2]), 1)
    num = (pad[1:-1, 1:-1] + pad[:-2, 1:-1] + pad[2:, 1:-1]
           + pad[1:-1, :-2] + pad[1:-1, 2:])
    den = (cnt[1:-1, 1:-1] + cnt[:-2, 1:-1] + cnt[2:, 1:-1]
           + cnt[1:-1, :-2] + cnt[1:-1, 2:])
    sm = num / den[:, :, None]
    # renormalize so the peak offset magnitude is exactly max_offset_px
    # (the averaging pass would otherwise shrink it to ~0.45 max)
    peak = np.abs(sm).max()
    if peak > 0:
        sm = sm / peak
    return deform2d.DeformationField2D(sm * max_offset_px)


def perturb_views(views: list, max_offset_px: float, seed: int = 0,
                  grid_size: int = PERTURB_GRID):
    """Warp each view by a random smooth field; fields returned as ground truth."""
    rng = np.random.default_rng(seed)
    fields, out = [], []
    for pv in views:
        f = random_smooth_field(grid_size, max_offset_px, rng)
        fields.append(f)
        if max_offset_px == 0:
            out.append(PosedImage(pv.image.copy(), pv.camera))
        else:
            out.append(PosedImage(deform2d.deform_image(pv.image, f), pv.camera))
    return out, fields


# ---------------------------------------------------------------------------
# Mesh degradation


def _vertex_adjacency_lists(mesh: Mesh):
    adj = [set() for _ in range(mesh.n_vertices)]
    for a, b, c in mesh.faces:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return adj


def decimate(mesh: Mesh, vertex_fraction: float, seed: int = 0) -> Mesh:
    """Naive shortest-edge collapse down to a vertex fraction."""
    verts = list(map(np.array, mesh.vertices))
    colors = None if mesh.colors is None else list(map(np.array, mesh.colors))
    faces = [tuple(f) for f in mesh.faces]
    target = max(int(mesh.n_vertices * vertex_fraction), 4)
    alive = [True] * len(verts)
    remap = list(range(len(verts)))

    def find(i):
        while remap[i] != i:
            remap[i] = remap[remap[i]]
            i = remap[i]
        return i

    n_alive = len(verts)
    while n_alive > target:
        # rebuild candidate edges from the current faces
        edges = set()
        for f in faces:
            a, b, c = (find(x) for x in f)
            if a == b or b == c or a == c:
                continue
            edges.update({tuple(sorted(e)) for e in ((a, b), (b, c), (c, a))})
        if not edges:
            break
        best = min(edges, key=lambda e: (np.sum((verts[e[0]] - verts[e[1]]) ** 2),) + e)
        i, j = best
        verts[i] = 0.5 * (verts[i] + verts[j])
        if colors is not None:
            colors[i] = 0.5 * (colors[i] + colors[j])
        remap[j] = i
        alive[j] = False
        n_alive -= 1

    index = {}
    new_verts, new_colors = [], []
    new_faces = []
    for f in faces:
        a, b, c = (find(x) for x in f)
        if a == b or b == c or a == c:
            continue
        ids = []
        for x in (a, b, c):
            if x not in index:
                index[x] = len(new_verts)
                new_verts.append(verts[x])
                if colors is not None:
                    new_colors.append(colors[x])
            ids.append(index[x])
        new_faces.append(ids)
    # drop exact-duplicate and degenerate faces
    nv = np.array(new_verts)
    nf = np.array(new_faces, dtype=np.int64)
    p0, p1, p2 = nv[nf[:, 0]], nv[nf[:, 1]], nv[nf[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)
    nf = nf[areas > 1e-12]
    nc = np.array(new_colors) if colors is not None else None
    return Mesh(nv, nf, nc, validate=False)


def laplacian_smooth(mesh: Mesh, iterations: int, lam: float = 0.5) -> Mesh:
    adj = _vertex_adjacency_lists(mesh)
    verts = mesh.vertices.copy()
    for _ in range(iterations):
        new = verts.copy()
        for i, nbrs in enumerate(adj):
            if nbrs:
                avg = verts[list(nbrs)].mean(axis=0)
                new[i] = (1 - lam) * verts[i] + lam * avg
        verts = new
    return mesh.with_vertices(verts)


def blur_colors(mesh: Mesh, iterations: int) -> Mesh:
    if mesh.colors is None:
        raise ValueError("mesh has no colors to blur")
    adj = _vertex_adjacency_lists(mesh)
    colors = mesh.colors.copy()
    for _ in range(iterations):
        new = colors.copy()
        for i, nbrs in enumerate(adj):
            if nbrs:
                new[i] = 0.5 * colors[i] + 0.5 * colors[list(nbrs)].mean(axis=0)
        colors = new
    return mesh.with_colors(colors)


def shape_offset(mesh: Mesh, amount: float, seed: int = 0, n_waves: int = 4,
                 freq_range: tuple = (1.0, 2.5)):
    """Smooth low-frequency displacement with max norm amount * bbox diagonal.

    `n_waves`/`freq_range` control the spatial frequency content; a single
    unit-frequency wave per component gives a near-global bend that smooth
    deformers can extrapolate from partial observations.

    Returns (degraded mesh, displacement array) so recovery tests know the
    injected ground truth.
    """
    rng = np.random.default_rng(seed)
    disp = np.stack([_smooth_radial_bump(mesh.vertices, rng, n_waves, freq_range)
                     for _ in range(3)], axis=1)
    mx = np.max(np.linalg.norm(disp, axis=1))
    if mx > 0 and amount > 0:
        disp = disp / mx * (amount * mesh.bbox_diagonal())
    else:
        disp = np.zeros_like(disp)
    return mesh.with_vertices(mesh.vertices + disp), disp


def degrade_mesh(mesh: Mesh, mode: str, amount, seed: int = 0):
    """Returns (degraded mesh, info dict with any injected ground truth)."""
    if mode == "decimate":
        if amount >= 1.0 or amount == 0:
            return mesh.copy(), {}
        return decimate(mesh, 1.0 - amount if amount < 1 else amount, seed), {}
    if mode == "smooth":
        return laplacian_smooth(mesh, int(amount)), {}
    if mode == "blur_colors":
        if int(amount) == 0:
            return mesh.copy(), {}
        return blur_colors(mesh, int(amount)), {}
    if mode == "shape_offset":
        m, disp = shape_offset(mesh, float(amount), seed)
        return m, {"displacement": disp}
    raise ValueError(f"unknown degradation mode {mode!r}")


# ---------------------------------------------------------------------------
# Scenario bundles


@dataclass
class Scenario:
    name: str
    seed: int
    gt_mesh: Mesh
    views: list                    # 6 PosedImage (perturbed)
    injected_fields: list          # DeformationField2D per view
    initial_mesh: Mesh
    input_image: PosedImage
    normal_views: list             # reference normal maps (GT renders)


def make_scenario(name: str, seed: int = 0, resolution: int = DEFAULT_RESOLUTION,
                  perturb_px: float = 4.0, offset_amount: float = 0.05,
                  color_pattern_name: str = "gradient",
                  subdivisions: int = 3) -> Scenario:
    gt = make_gt_mesh(name, subdivisions, color_pattern_name, seed)
    clean_views = render_views(gt, resolution)
    views, fields = perturb_views(clean_views, perturb_px, seed)
    init, _ = shape_offset(gt, offset_amount, seed + 1)
    init = blur_colors(init, 3)
    in_cam = Camera(fov_deg=DEFAULT_FOV, distance=DEFAULT_DISTANCE,
                    elevation_deg=0.0, azimuth_deg=0.0,
                    resolution=(resolution, resolution))
    input_image = PosedImage(render(gt, in_cam, mode="hard").image, in_cam)
    normal_views = render_normal_views(gt, resolution)
    return Scenario(name=name, seed=seed, gt_mesh=gt, views=views,
                    injected_fields=fields, initial_mesh=init,
                    input_image=input_image, normal_views=normal_views)


def save_scenario(scn: Scenario, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(scn.gt_mesh, out / "gt_mesh.ply")
    save_ply(scn.initial_mesh, out / "initial_mesh.ply")
    cams = []
    for k, pv in enumerate(scn.views):
        save_png(pv.image, out / f"view_{k}.png")
        save_png(scn.normal_views[k].image, out / f"normal_{k}.png")
        (out / f"field_{k}.json").write_text(scn.injected_fields[k].to_json())
        c = pv.camera
        cams.append({"fov_deg": c.fov_deg, "distance": c.distance,
                     "elevation_deg": c.elevation_deg, "azimuth_deg": c.azimuth_deg,
                     "width": c.width, "height": c.height})
    save_png(scn.input_image.image, out / "input.png")
    ic = scn.input_image.camera
    manifest = {
        "name": scn.name,
        "seed": scn.seed,
        "views": cams,
        "input_camera": {"fov_deg": ic.fov_deg, "distance": ic.distance,
                         "elevation_deg": ic.elevation_deg,
                         "azimuth_deg": ic.azimuth_deg,
                         "width": ic.width, "height": ic.height},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _camera_from_doc(doc) -> Camera:
    return Camera(fov_deg=doc["fov_deg"], distance=doc["distance"],
                  elevation_deg=doc["elevation_deg"], azimuth_deg=doc["azimuth_deg"],
                  resolution=(doc["width"], doc["height"]))


def load_scenario(in_dir) -> Scenario:
    src = Path(in_dir)
    missing = [n for n in ("manifest.json", "gt_mesh.ply", "initial_mesh.ply", "input.png")
               if not (src / n).exists()]
    if missing:
        raise FileNotFoundError(f"scenario bundle incomplete, missing: {missing}")
    manifest = json.loads((src / "manifest.json").read_text())
    gt = load_ply(src / "gt_mesh.ply")
    init = load_ply(src / "initial_mesh.ply")
    views, fields, normal_views = [], [], []
    for k, cdoc in enumerate(manifest["views"]):
        cam = _camera_from_doc(cdoc)
        views.append(PosedImage(load_png(src / f"view_{k}.png"), cam))
        normal_views.append(PosedImage(load_png(src / f"normal_{k}.png"), cam))
        fields.append(deform2d.DeformationField2D.from_json(
            (src / f"field_{k}.json").read_text()))
    input_image = PosedImage(load_png(src / "input.png"),
                             _camera_from_doc(manifest["input_camera"]))
    return Scenario(name=manifest["name"], seed=manifest["seed"], gt_mesh=gt,
                    views=views, injected_fields=fields, initial_mesh=init,
                    input_image=input_image, normal_views=normal_views)
