import numpy as np
import pytest

from meshenhance.mesh import (Mesh, MeshError, load_obj, load_ply, save_obj,
                              save_ply, vertex_normals)

from conftest import random_mesh

TRI = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def test_face_area_unit_right_triangle():
    assert TRI.face_areas()[0] == pytest.approx(0.5)


def test_face_normal_ccw():
    np.testing.assert_allclose(TRI.face_normals()[0], [0, 0, 1])


def test_validate_rejects_bad_index():
    with pytest.raises(MeshError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_validate_rejects_degenerate_face():
    with pytest.raises(MeshError):
        Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])


def test_validate_rejects_out_of_range_colors():
    with pytest.raises(MeshError):
        Mesh(TRI.vertices, TRI.faces, np.full((3, 4), 1.5))


def test_rgb_colors_promoted_to_rgba():
    m = Mesh(TRI.vertices, TRI.faces, np.full((3, 3), 0.5))
    assert m.colors.shape == (3, 4)
    np.testing.assert_allclose(m.colors[:, 3], 1.0)


def test_edges_unique_tetrahedron():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
             [[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
    assert len(m.edges_unique()) == 6


def test_vertex_normals_unit_sphere():
    from meshenhance import scenario
    m = scenario.icosphere(3)
    vn = vertex_normals(m)
    # icosphere vertex normals should point radially outward
    dots = np.einsum("ij,ij->i", vn, m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True))
    assert dots.min() > 0.99


def test_obj_roundtrip(tmp_path):
    m = random_mesh(1)
    save_obj(m, tmp_path / "m.obj")
    m2 = load_obj(tmp_path / "m.obj")
    np.testing.assert_allclose(m2.vertices, m.vertices)
    np.testing.assert_array_equal(m2.faces, m.faces)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_roundtrip_with_colors(tmp_path, binary):
    m = random_mesh(2)
    rng = np.random.default_rng(0)
    m = m.with_colors(rng.random((m.n_vertices, 4)))
    save_ply(m, tmp_path / "m.ply", binary=binary)
    m2 = load_ply(tmp_path / "m.ply")
    np.testing.assert_allclose(m2.vertices, m.vertices)
    np.testing.assert_array_equal(m2.faces, m.faces)
    # colors are quantized to 8 bits
    assert np.abs(m2.colors - m.colors).max() <= 0.5 / 255 + 1e-12


def test_ply_deterministic_bytes(tmp_path):
    m = random_mesh(3).with_colors(np.full((random_mesh(3).n_vertices, 4), 0.25))
    save_ply(m, tmp_path / "a.ply")
    save_ply(m, tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_ply_rejects_garbage(tmp_path):
    (tmp_path / "bad.ply").write_bytes(b"not a ply at all")
    with pytest.raises(MeshError):
        load_ply(tmp_path / "bad.ply")
