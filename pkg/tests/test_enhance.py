import csv

import numpy as np
import pytest

from meshenhance import scenario
from meshenhance.camera import Camera
from meshenhance.enhance import (EnhanceError, LossWeights, RefineWeights,
                                 _check_finite, enhance_appearance,
                                 enhance_fidelity, estimate_camera,
                                 optimize_shape, refine_geometry)
from meshenhance.optim import OptimConfig
from meshenhance.raster import render
from meshenhance.unproject import unproject


def small_setup(res=64):
    m = scenario.make_gt_mesh("sphere", 2, "gradient")
    views = scenario.render_views(m, res)
    return m, views


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(w1=-1.0)
    LossWeights()  # defaults are valid


def test_check_finite_raises():
    with pytest.raises(EnhanceError):
        _check_finite(float("nan"), 3)
    with pytest.raises(EnhanceError):
        _check_finite(float("inf"), 0)
    _check_finite(1.0, 0)


def test_zero_iterations_equals_direct_unprojection():
    """With no optimization the fields stay zero, so the result is the plain
    unprojection of the (undeformed) views."""
    m, views = small_setup()
    out, fields, imgs = enhance_appearance(m, views, LossWeights(),
                                           OptimConfig(iterations=0))
    ref = unproject(m, views)
    np.testing.assert_allclose(out.colors, ref.colors, atol=1e-12)
    assert all(np.all(f.offsets == 0.0) for f in fields)
    for pv, img in zip(views, imgs):
        np.testing.assert_allclose(img.pixels, pv.image.pixels, atol=1e-12)


def test_appearance_never_moves_geometry():
    m, views = small_setup()
    out, _, _ = enhance_appearance(m, views, LossWeights(),
                                   OptimConfig(iterations=3, step_size=0.3))
    np.testing.assert_array_equal(out.vertices, m.vertices)
    np.testing.assert_array_equal(out.faces, m.faces)


def test_appearance_loss_decreases(tmp_path):
    m, clean = small_setup()
    views, _ = scenario.perturb_views(clean, 3.0, seed=0)
    csv_path = tmp_path / "loss.csv"
    enhance_appearance(m, views, LossWeights(),
                       OptimConfig(iterations=12, step_size=0.3),
                       loss_csv=csv_path)
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "total", "mse", "mask", "smooth"]
    totals = [float(r[1]) for r in rows[1:]]
    assert len(totals) == 12
    assert min(totals) < totals[0]


def test_optimize_shape_requires_colors():
    m = scenario.icosphere(1)
    cam = Camera(resolution=(48, 48))
    img = render(scenario.make_gt_mesh("sphere", 1, "gradient"), cam, mode="hard").image
    with pytest.raises(EnhanceError):
        optimize_shape(m, img, cam, LossWeights(), OptimConfig(iterations=1))


def test_refine_geometry_zero_iterations_is_identity():
    m = scenario.make_gt_mesh("sphere", 1, "gradient")
    nviews = scenario.render_normal_views(m, 48)
    out = refine_geometry(m, nviews, OptimConfig(iterations=0))
    np.testing.assert_array_equal(out.vertices, m.vertices)


def test_refine_geometry_moves_toward_reference():
    gt = scenario.make_gt_mesh("sphere", 2, "gradient")
    rng = np.random.default_rng(0)
    noisy = gt.with_vertices(gt.vertices + 0.02 * rng.normal(size=gt.vertices.shape))
    nviews = scenario.render_normal_views(gt, 64)
    out = refine_geometry(noisy, nviews,
                          OptimConfig(iterations=15, step_size=2e-3),
                          RefineWeights())
    d0 = np.abs(np.linalg.norm(noisy.vertices, axis=1) - 1.0).mean()
    d1 = np.abs(np.linalg.norm(out.vertices, axis=1) - 1.0).mean()
    assert d1 < d0


def test_enhance_fidelity_smoke(tmp_path):
    gt = scenario.make_gt_mesh("sphere", 2, "gradient")
    init, _ = scenario.shape_offset(gt, 0.03, seed=1)
    init = init.with_colors(gt.colors)
    cam = Camera(elevation_deg=0, azimuth_deg=0, resolution=(64, 64))
    img = render(gt, cam, mode="hard").image
    final, deformed = enhance_fidelity(init, img, cam, LossWeights(),
                                       OptimConfig(iterations=4, step_size=1e-3),
                                       loss_csv=tmp_path / "loss.csv")
    assert final.colors is not None
    np.testing.assert_array_equal(deformed.faces, init.faces)
    np.testing.assert_array_equal(final.vertices, deformed.vertices)
    assert (tmp_path / "loss.csv").exists()


def test_fidelity_deformers_accepted():
    gt = scenario.make_gt_mesh("sphere", 1, "gradient")
    cam = Camera(resolution=(48, 48))
    img = render(gt, cam, mode="hard").image
    for name in ("jacobian", "vertex", "grid3d"):
        out = optimize_shape(gt, img, cam, LossWeights(),
                             OptimConfig(iterations=2, step_size=1e-3),
                             deformer_name=name)
        assert out.vertices.shape == gt.vertices.shape


def test_estimate_camera_returns_input_resolution():
    m = scenario.make_gt_mesh("blob", 2, "gradient")
    cam = Camera(elevation_deg=20, azimuth_deg=0, resolution=(96, 96))
    img = render(m, cam, mode="hard").image
    est = estimate_camera(m, img, refine_iterations=0, score_resolution=48)
    assert (est.width, est.height) == (96, 96)
    assert abs(est.elevation_deg - 20.0) <= 3.0  # coarse+fine grid only
