import numpy as np
import pytest

from meshenhance import deform3d, scenario
from meshenhance.deform3d import (DEFORMERS, JacobianField, PoissonSystem,
                                  init_jacobians, laplacian_smooth_grad,
                                  laplacian_smooth_loss, mesh_roughness,
                                  uniform_laplacian)
from meshenhance.mesh import Mesh, MeshError

from conftest import random_mesh


def test_jacobian_field_validation():
    with pytest.raises(ValueError):
        JacobianField(np.zeros((4, 3, 2)))
    with pytest.raises(ValueError):
        JacobianField(np.full((4, 3, 3), np.inf))


def test_identity_jacobians_reproduce_vertices():
    m = random_mesh(0)
    sys = PoissonSystem.build(m)
    v = sys.solve(init_jacobians(m))
    assert np.abs(v - m.vertices).max() < 1e-6


def test_poisson_translation_invariance():
    """Adding a constant to the target positions leaves J unchanged, so the
    solve recenters to the original centroid regardless."""
    m = random_mesh(1)
    sys = PoissonSystem.build(m)
    J = init_jacobians(m)
    v = sys.solve(J)
    np.testing.assert_allclose(v.mean(axis=0), m.centroid(), atol=1e-9)


def test_poisson_linear_map_recovered():
    """J = A (constant linear map) reproduces A @ vertices up to translation."""
    m = random_mesh(2)
    rng = np.random.default_rng(0)
    A = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    target = m.vertices @ A.T
    from meshenhance.operators import build_gradient_operator
    J = JacobianField((build_gradient_operator(m) @ target).reshape(-1, 3, 3))
    v = PoissonSystem.build(m).solve(J)
    expect = target - target.mean(axis=0) + m.centroid()
    assert np.abs(v - expect).max() < 1e-6


def test_dense_least_squares_oracle():
    m = random_mesh(3, subdivisions=1)  # 42 vertices
    sys = PoissonSystem.build(m)
    rng = np.random.default_rng(1)
    J = JacobianField(init_jacobians(m).matrices + 0.2 * rng.normal(size=(m.n_faces, 3, 3)))
    v = sys.solve(J)
    L = sys.laplacian.toarray()
    rhs = sys.grad_op.T @ (sys.mass @ J.flat())
    v_ls, *_ = np.linalg.lstsq(L, rhs, rcond=None)
    v_ls += m.centroid() - v_ls.mean(axis=0)
    assert np.abs(v - v_ls).max() / np.abs(v_ls).max() < 1e-6


def test_adjoint_matches_finite_differences():
    m = random_mesh(4, subdivisions=1)
    sys = PoissonSystem.build(m)
    rng = np.random.default_rng(2)
    J = JacobianField(init_jacobians(m).matrices + 0.1 * rng.normal(size=(m.n_faces, 3, 3)))
    g = rng.normal(size=(m.n_vertices, 3))
    gJ = sys.adjoint(g).matrices

    def loss(Jm):
        return float(np.sum(sys.solve(JacobianField(Jm)) * g))

    for _ in range(6):
        i, j, k = rng.integers(m.n_faces), rng.integers(3), rng.integers(3)
        e = 1e-6
        jp = J.matrices.copy(); jp[i, j, k] += e
        jm = J.matrices.copy(); jm[i, j, k] -= e
        fd = (loss(jp) - loss(jm)) / (2 * e)
        assert gJ[i, j, k] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_disconnected_mesh_rejected():
    a = random_mesh(0, subdivisions=0)
    b = random_mesh(1, subdivisions=0)
    verts = np.concatenate([a.vertices, b.vertices + 5.0])
    faces = np.concatenate([a.faces, b.faces + a.n_vertices])
    with pytest.raises(MeshError, match="connected components"):
        PoissonSystem.build(Mesh(verts, faces))


def test_topology_mismatch_rejected():
    m = random_mesh(0)
    sys = PoissonSystem.build(m)
    with pytest.raises(ValueError):
        sys.solve(JacobianField(np.zeros((m.n_faces + 1, 3, 3))))


def test_laplacian_smooth_grad_fd():
    m = random_mesh(5, subdivisions=1)
    L = uniform_laplacian(m)
    rng = np.random.default_rng(3)
    v = m.vertices + 0.01 * rng.normal(size=m.vertices.shape)
    g = laplacian_smooth_grad(L, v)
    e = 1e-6
    for _ in range(4):
        i, j = rng.integers(m.n_vertices), rng.integers(3)
        vp = v.copy(); vp[i, j] += e
        vm = v.copy(); vm[i, j] -= e
        fd = (laplacian_smooth_loss(L, vp) - laplacian_smooth_loss(L, vm)) / (2 * e)
        assert g[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-12)


def test_roughness_increases_with_noise():
    m = random_mesh(6)
    rng = np.random.default_rng(4)
    noisy = m.with_vertices(m.vertices + 0.02 * rng.normal(size=m.vertices.shape))
    assert mesh_roughness(noisy) > mesh_roughness(m)


def test_deformer_interfaces():
    m = scenario.make_gt_mesh("sphere", 1, "gradient")
    for name, cls in DEFORMERS.items():
        d = cls(m)
        v = d.vertices(d.params)
        assert v.shape == m.vertices.shape
        if name in ("vertex", "grid3d"):
            np.testing.assert_allclose(v, m.vertices, atol=1e-9)
        else:
            assert np.abs(v - m.vertices).max() < 1e-6
        g = d.grad_params(d.params, np.ones_like(v))
        assert g.shape == np.asarray(d.params).shape


def test_grid3d_deformer_adjoint():
    m = scenario.make_gt_mesh("sphere", 1, "gradient")
    d = DEFORMERS["grid3d"](m)
    rng = np.random.default_rng(5)
    gv = rng.normal(size=(m.n_vertices, 3))
    gp = d.grad_params(d.params, gv)
    # adjoint identity: <gv, W p> == <W^T gv, p>
    p = rng.normal(size=d.params.shape)
    lhs = float(np.sum(gv * (d.vertices(p) - d.base)))
    rhs = float(np.sum(gp * p))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_determinism():
    m = random_mesh(7)
    sys = PoissonSystem.build(m)
    rng = np.random.default_rng(6)
    J = JacobianField(init_jacobians(m).matrices + 0.1 * rng.normal(size=(m.n_faces, 3, 3)))
    v1 = sys.solve(J)
    v2 = PoissonSystem.build(m).solve(J)
    np.testing.assert_array_equal(v1, v2)
