import numpy as np
import pytest
from scipy.spatial.distance import cdist

from meshenhance import metrics, scenario
from meshenhance.image import ImageRGBA
from meshenhance.metrics import (EvalReport, chamfer_fscore, evaluate,
                                 ghosting_metric, image_ghosting, psnr,
                                 sample_surface, silhouette_iou, ssim)


def opaque(rgb_value, h=32, w=32):
    px = np.empty((h, w, 4))
    px[..., :3] = rgb_value
    px[..., 3] = 1.0
    return ImageRGBA(px)


def test_psnr_identical_hits_cap():
    a = opaque(0.3)
    assert psnr(a, a) == 99.0


def test_psnr_known_mse():
    # constant difference 0.1 -> MSE 0.01 -> exactly 20 dB
    assert psnr(opaque(0.5), opaque(0.6)) == pytest.approx(20.0, abs=1e-9)


def test_psnr_black_vs_white_is_zero():
    assert psnr(opaque(0.0), opaque(1.0)) == pytest.approx(0.0, abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(opaque(0.5, 16, 16), opaque(0.5, 32, 32))


def test_transparent_regions_composite_to_white():
    """A fully transparent image compares equal to a white one."""
    clear = ImageRGBA(np.zeros((16, 16, 4)))
    assert psnr(clear, opaque(1.0, 16, 16)) == 99.0


def test_ssim_identity_and_sensitivity():
    rng = np.random.default_rng(0)
    px = np.concatenate([rng.random((32, 32, 3)), np.ones((32, 32, 1))], axis=2)
    a = ImageRGBA(px)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    noisy = ImageRGBA(np.clip(px + rng.normal(scale=0.2, size=px.shape)
                              * np.array([1, 1, 1, 0]), 0, 1))
    assert ssim(a, noisy) < 0.9


def test_sample_surface_points_on_unit_sphere():
    m = scenario.icosphere(3)
    pts = sample_surface(m, 2000, seed=1)
    r = np.linalg.norm(pts, axis=1)
    # samples lie on chords of the sphere, slightly inside radius 1
    assert r.max() <= 1.0 + 1e-12 and r.min() > 0.97


def test_chamfer_fscore_brute_force_oracle():
    a = scenario.make_gt_mesh("sphere", 1, "gradient")
    b = scenario.make_gt_mesh("blob", 1, "gradient", seed=2)
    cd, fs = chamfer_fscore(a, b, n_samples=1000, threshold=0.2, seed=5)
    pa = sample_surface(a, 1000, 5)
    pb = sample_surface(b, 1000, 5)
    d = cdist(pa, pb)
    d_ab = d.min(axis=1)
    d_ba = d.min(axis=0)
    cd_ref = float(d_ab.mean() + d_ba.mean())
    prec = float(np.mean(d_ab <= 0.2))
    rec = float(np.mean(d_ba <= 0.2))
    fs_ref = 2 * prec * rec / (prec + rec)
    assert abs(cd - cd_ref) < 1e-9
    assert abs(fs - fs_ref) < 1e-9


def test_chamfer_symmetric_and_zero_on_identity():
    a = scenario.make_gt_mesh("torus", 1, "gradient")
    b = scenario.make_gt_mesh("sphere", 1, "gradient")
    cd_ab, fs_ab = chamfer_fscore(a, b, n_samples=500)
    cd_ba, fs_ba = chamfer_fscore(b, a, n_samples=500)
    assert cd_ab == pytest.approx(cd_ba, abs=1e-12)
    assert fs_ab == pytest.approx(fs_ba, abs=1e-12)
    cd_aa, fs_aa = chamfer_fscore(a, a, n_samples=500)
    assert cd_aa == 0.0 and fs_aa == 1.0


def test_chamfer_translation_scales():
    a = scenario.icosphere(2)
    for t in (0.05, 0.1):
        b = a.with_vertices(a.vertices + np.array([0, 0, t]))
        cd, _ = chamfer_fscore(a, b, n_samples=2000)
        # both directions contribute, and the NN distance is below the
        # translation magnitude (the surface can shortcut)
        assert 0 < cd <= 2 * t + 1e-9


def test_image_ghosting_requires_overlap():
    with pytest.raises(ValueError):
        image_ghosting(ImageRGBA(np.zeros((8, 8, 4))), ImageRGBA(np.zeros((8, 8, 4))))
    assert image_ghosting(opaque(0.2), opaque(0.5)) == pytest.approx(0.3)


def test_ghosting_metric_zero_for_consistent_views():
    m = scenario.make_gt_mesh("sphere", 2, "gradient")
    views = scenario.render_views(m, 64)
    assert ghosting_metric(m, views) == pytest.approx(0.0, abs=1e-12)


def test_silhouette_iou_cases():
    full = opaque(0.5, 16, 16)
    empty = ImageRGBA(np.zeros((16, 16, 4)))
    half_px = np.zeros((16, 16, 4))
    half_px[:8, :, 3] = 1.0
    half = ImageRGBA(half_px)
    assert silhouette_iou(full, full) == 1.0
    assert silhouette_iou(full, empty) == 0.0
    assert silhouette_iou(empty, empty) == 1.0
    assert silhouette_iou(full, half) == pytest.approx(0.5)


def test_eval_report_roundtrip_and_text():
    r = EvalReport(psnr=30.0, ssim=0.9, chamfer=0.01, fscore=0.95, iou=0.97,
                   ghosting=0.02, per_view_psnr=[29.0, 31.0], per_view_ssim=[0.9])
    back = EvalReport.from_json(r.to_json())
    assert back == r
    text = r.to_text()
    assert "psnr = 30.000000" in text and "per_view_psnr = 29.000000 31.000000" in text


def test_evaluate_perfect_mesh():
    m = scenario.make_gt_mesh("sphere", 2, "gradient")
    cams = scenario.default_cameras(48)[:2]
    rep = evaluate(m, m, cams, n_samples=500)
    assert rep.psnr == 99.0 and rep.iou == 1.0 and rep.chamfer == 0.0
    assert rep.ssim == pytest.approx(1.0, abs=1e-12)
    assert len(rep.per_view_psnr) == 2
