import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshenhance import deform2d
from meshenhance.deform2d import DeformationField2D
from meshenhance.image import ImageRGBA


def rand_image(rng, h=24, w=32):
    return ImageRGBA(rng.random((h, w, 4)))


def test_zero_field_is_identity(rng):
    img = rand_image(rng)
    out = deform2d.deform_image(img, DeformationField2D.zeros(8))
    np.testing.assert_array_equal(out.pixels, img.pixels)


def test_constant_integer_shift():
    rng = np.random.default_rng(0)
    img = rand_image(rng)
    off = np.zeros((6, 6, 2))
    off[:, :, 0] = 3.0  # sample 3 px to the left -> shifts content right
    out = deform2d.deform_image(img, DeformationField2D(off, max_offset=3.0))
    np.testing.assert_allclose(out.pixels[:, 3:], img.pixels[:, :-3], atol=1e-12)
    # pixels pulled from outside the image become transparent black
    np.testing.assert_array_equal(out.pixels[:, :3], 0.0)


def test_field_shape_validation():
    with pytest.raises(ValueError):
        DeformationField2D(np.zeros((4, 5, 2)))
    with pytest.raises(ValueError):
        DeformationField2D(np.full((4, 4, 2), np.nan))


def test_offset_bound_enforced():
    img = ImageRGBA.blank(40, 40)
    f = DeformationField2D(np.full((5, 5, 2), 5.0))  # bound = 0.1*40 = 4
    with pytest.raises(ValueError):
        deform2d.deform_image(img, f)
    f = DeformationField2D(np.full((5, 5, 2), 5.0), max_offset=6.0)
    deform2d.deform_image(img, f)  # explicit bound allows it


def test_grid_corners_pin_to_image_corners():
    rng = np.random.default_rng(1)
    f = DeformationField2D(rng.normal(size=(7, 7, 2)))
    off = deform2d.pixel_offsets(f, 50, 30)
    np.testing.assert_allclose(off[0, 0], f.offsets[0, 0])
    np.testing.assert_allclose(off[-1, -1], f.offsets[-1, -1])
    np.testing.assert_allclose(off[0, -1], f.offsets[0, -1])


def test_adjoint_matches_finite_differences(rng):
    img = rand_image(rng)
    f = DeformationField2D(rng.normal(scale=1.2, size=(5, 5, 2)), max_offset=10)
    g = rng.normal(size=(24, 32, 4))
    gf = deform2d.deform_backward(img, f, g)

    def loss(off):
        o = deform2d.deform_image(img, DeformationField2D(off, max_offset=10))
        return float(np.sum(o.pixels * g))

    for _ in range(6):
        i, j, k = rng.integers(5), rng.integers(5), rng.integers(2)
        e = 1e-6
        op = f.offsets.copy(); op[i, j, k] += e
        om = f.offsets.copy(); om[i, j, k] -= e
        fd = (loss(op) - loss(om)) / (2 * e)
        assert gf[i, j, k] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_adjoint_inner_product_identity(rng):
    """<D(I), g> adjoint check: grad wrt offsets of linearized warp."""
    img = rand_image(rng, 16, 16)
    f = DeformationField2D(rng.normal(scale=0.7, size=(4, 4, 2)))
    g = rng.normal(size=(16, 16, 4))
    gf = deform2d.deform_backward(img, f, g)
    # directional derivative along a random direction matches <gf, d>
    d = rng.normal(size=(4, 4, 2))
    e = 1e-6
    lp = np.sum(deform2d.deform_image(img, DeformationField2D(f.offsets + e * d)).pixels * g)
    lm = np.sum(deform2d.deform_image(img, DeformationField2D(f.offsets - e * d)).pixels * g)
    assert (lp - lm) / (2 * e) == pytest.approx(float(np.sum(gf * d)), rel=1e-4)


def test_smoothness_zero_for_constant_field():
    f = DeformationField2D(np.full((9, 9, 2), 2.5))
    assert deform2d.smoothness_loss(f) == 0.0


def test_smoothness_grad_matches_fd(rng):
    f = DeformationField2D(rng.normal(size=(6, 6, 2)))
    g = deform2d.smoothness_grad(f)
    e = 1e-6
    for _ in range(4):
        i, j, k = rng.integers(6), rng.integers(6), rng.integers(2)
        op = f.offsets.copy(); op[i, j, k] += e
        om = f.offsets.copy(); om[i, j, k] -= e
        fd = (deform2d.smoothness_loss(DeformationField2D(op))
              - deform2d.smoothness_loss(DeformationField2D(om))) / (2 * e)
        assert g[i, j, k] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_json_roundtrip(rng):
    f = DeformationField2D(rng.normal(size=(8, 8, 2)))
    f2 = DeformationField2D.from_json(f.to_json())
    np.testing.assert_allclose(f2.offsets, f.offsets, atol=1e-11)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 3.0))
def test_warp_preserves_range(seed, scale):
    """Warped pixel values stay inside the input's [0,1] range."""
    rng = np.random.default_rng(seed)
    img = ImageRGBA(rng.random((20, 20, 4)))
    f = DeformationField2D(rng.normal(scale=scale, size=(5, 5, 2)), max_offset=10)
    out = deform2d.deform_image(img, f)
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0
