"""Image and geometry quality metrics plus the evaluation report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import convolve
from scipy.spatial import cKDTree

from .camera import Camera
from .image import ImageRGBA
from .mesh import Mesh
from .raster import render

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DEFAULT_FSCORE_THRESHOLD = 0.2
DEFAULT_N_SAMPLES = 10000


def _to_rgb_on_white(img: ImageRGBA) -> np.ndarray:
    return img.composite_over_white()


def psnr(img_a: ImageRGBA, img_b: ImageRGBA) -> float:
    """Peak signal-to-noise ratio over white-composited RGB, capped at 99 dB."""
    a = _to_rgb_on_white(img_a)
    b = _to_rgb_on_white(img_b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k /= k.sum()
    return np.outer(k, k)


def ssim(img_a: ImageRGBA, img_b: ImageRGBA) -> float:
    """Mean structural similarity (Gaussian 11x11 window, sigma 1.5)."""
    a = _to_rgb_on_white(img_a)
    b = _to_rgb_on_white(img_b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    kern = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    vals = []
    for ch in range(3):
        x, y = a[..., ch], b[..., ch]
        mu_x = convolve(x, kern, mode="reflect")
        mu_y = convolve(y, kern, mode="reflect")
        sxx = convolve(x * x, kern, mode="reflect") - mu_x ** 2
        syy = convolve(y * y, kern, mode="reflect") - mu_y ** 2
        sxy = convolve(x * y, kern, mode="reflect") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def sample_surface(mesh: Mesh, n_samples: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples, (n, 3)."""
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    fi = rng.choice(len(areas), size=n_samples, p=areas / total)
    u = rng.random(n_samples)
    v = rng.random(n_samples)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    tri = mesh.vertices[mesh.faces[fi]]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def chamfer_fscore(mesh_a: Mesh, mesh_b: Mesh, n_samples: int = DEFAULT_N_SAMPLES,
                   threshold: float = DEFAULT_FSCORE_THRESHOLD, seed: int = 0):
    """Symmetric Chamfer distance (mean nearest-neighbor distance both ways)
    and F-score at the given absolute distance threshold. Both meshes are
    sampled with the same seed, so the result is exactly symmetric."""
    pa = sample_surface(mesh_a, n_samples, seed)
    pb = sample_surface(mesh_b, n_samples, seed)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    chamfer = float(np.mean(d_ab) + np.mean(d_ba))
    precision = float(np.mean(d_ab <= threshold))
    recall = float(np.mean(d_ba <= threshold))
    if precision + recall == 0:
        fscore = 0.0
    else:
        fscore = 2 * precision * recall / (precision + recall)
    return chamfer, fscore


def image_ghosting(rendered: ImageRGBA, reference: ImageRGBA) -> float:
    """Mean absolute RGB error over pixels covered in both images."""
    both = (rendered.alpha > 0.5) & (reference.alpha > 0.5)
    if not both.any():
        raise ValueError("ghosting metric undefined: no overlapping coverage")
    diff = np.abs(rendered.rgb - reference.rgb)
    return float(diff[both].mean())


def ghosting_metric(mesh: Mesh, views: list) -> float:
    """Mean over posed views of the per-pixel RGB distance between the
    mesh's render and the view image on the joint foreground. Lower means
    the mesh texture is more consistent with the views."""
    vals = [image_ghosting(render(mesh, pv.camera, mode="hard").image, pv.image)
            for pv in views]
    return float(np.mean(vals))


def silhouette_iou(img_a: ImageRGBA, img_b: ImageRGBA) -> float:
    a = img_a.alpha > 0.5
    b = img_b.alpha > 0.5
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def mean_vertex_distance(vertices_a: np.ndarray, vertices_b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(vertices_a - vertices_b, axis=1)))


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    chamfer: float
    fscore: float
    iou: float
    ghosting: float
    per_view_psnr: list = field(default_factory=list)
    per_view_ssim: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def to_text(self) -> str:
        lines = []
        for key, val in asdict(self).items():
            if isinstance(val, list):
                val = " ".join(f"{x:.6f}" for x in val)
            else:
                val = f"{val:.6f}"
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def evaluate(mesh: Mesh, gt_mesh: Mesh, cameras: list, n_samples: int = DEFAULT_N_SAMPLES,
             threshold: float = DEFAULT_FSCORE_THRESHOLD, seed: int = 0) -> EvalReport:
    """Render both meshes at the given cameras and aggregate all metrics."""
    ps, ss, ious, ghosts = [], [], [], []
    for cam in cameras:
        r = render(mesh, cam, mode="hard").image
        g = render(gt_mesh, cam, mode="hard").image
        ps.append(psnr(r, g))
        ss.append(ssim(r, g))
        ious.append(silhouette_iou(r, g))
        ghosts.append(image_ghosting(r, g))
    chamfer, fscore = chamfer_fscore(mesh, gt_mesh, n_samples, threshold, seed)
    return EvalReport(psnr=float(np.mean(ps)), ssim=float(np.mean(ss)),
                      chamfer=chamfer, fscore=fscore,
                      iou=float(np.mean(ious)), ghosting=float(np.mean(ghosts)),
                      per_view_psnr=[float(x) for x in ps],
                      per_view_ssim=[float(x) for x in ss])
