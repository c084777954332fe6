"""Discrete differential operators on triangle meshes.

Per-face gradient (3T x V), face-area mass matrix (3T x 3T), and cotangent /
uniform Laplacians (V x V). The cotangent Laplacian satisfies L = G^T A G
with G the stacked gradient operator and A the mass matrix, which is what
makes the Poisson reconstruction in deform3d exact.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import DEGENERATE_AREA, Mesh, MeshError


class SparseOperator:
    """Immutable sparse linear operator assembled from (row, col, value) triplets."""

    def __init__(self, matrix: sp.spmatrix):
        m = matrix.tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        self.matrix = m

    @property
    def shape(self):
        return self.matrix.shape

    def triplets(self):
        """Canonically sorted (row, col, value) triplets; deterministic."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def T(self):
        return SparseOperator(self.matrix.T.tocsr())

    def toarray(self):
        return self.matrix.toarray()


def _checked_areas(mesh: Mesh) -> np.ndarray:
    areas = mesh.face_areas()
    bad = np.nonzero(areas < DEGENERATE_AREA)[0]
    if len(bad):
        raise MeshError(f"degenerate face(s): {bad[:10].tolist()}")
    return areas


def build_gradient_operator(mesh: Mesh) -> SparseOperator:
    """Stacked per-face gradient operator, shape (3T, V).

    Applied to a per-vertex scalar function it yields, per face, the 3D
    gradient of the piecewise-linear interpolant. Row block 3t..3t+2 holds
    the x/y/z components of the gradient on face t.
    """
    areas = _checked_areas(mesh)
    p0, p1, p2 = mesh.face_corner_positions()
    n = mesh.face_normals(normalized=True)
    T = mesh.n_faces

    # gradient of the hat function at corner i is N x (opposite edge) / (2A)
    grads = np.empty((T, 3, 3))  # (face, corner, xyz)
    grads[:, 0] = np.cross(n, p2 - p1)
    grads[:, 1] = np.cross(n, p0 - p2)
    grads[:, 2] = np.cross(n, p1 - p0)
    grads /= (2.0 * areas)[:, None, None]

    # row = 3*t + axis, col = faces[t, corner], val = grads[t, corner, axis]
    face_idx = np.arange(T)
    axes = np.arange(3)
    row = np.broadcast_to(3 * face_idx[:, None, None] + axes[None, :, None],
                          (T, 3, 3)).ravel()  # (T, axis, corner)
    col = np.broadcast_to(mesh.faces[:, None, :], (T, 3, 3)).ravel()
    val = grads.transpose(0, 2, 1).ravel()  # (face, axis, corner)
    m = sp.coo_matrix((val, (row, col)), shape=(3 * T, mesh.n_vertices))
    return SparseOperator(m)


def build_mass_matrix(mesh: Mesh) -> SparseOperator:
    """Diagonal mass matrix, shape (3T, 3T); entries 3k..3k+2 equal area of face k."""
    areas = _checked_areas(mesh)
    diag = np.repeat(areas, 3)
    return SparseOperator(sp.diags(diag).tocsr())


def build_laplacian(mesh: Mesh, kind: str = "cotangent") -> SparseOperator:
    """V x V Laplacian, positive semidefinite convention (row sums zero).

    kind='cotangent': off-diagonal -(cot a + cot b)/2 per shared edge.
    kind='uniform': graph Laplacian, diagonal = vertex degree.
    """
    V = mesh.n_vertices
    if kind == "uniform":
        e = mesh.edges_unique()
        ones = np.ones(len(e))
        adj = sp.coo_matrix((ones, (e[:, 0], e[:, 1])), shape=(V, V))
        adj = adj + adj.T
        deg = np.asarray(adj.sum(axis=1)).ravel()
        return SparseOperator(sp.diags(deg) - adj)
    if kind != "cotangent":
        raise ValueError(f"unknown Laplacian kind {kind!r}")

    _checked_areas(mesh)
    p0, p1, p2 = mesh.face_corner_positions()
    f = mesh.faces

    def cot(a, b):  # cotangent of angle between edge vectors a, b
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        return np.einsum("ij,ij->i", a, b) / np.maximum(cross, 1e-300)

    # angle at corner k weights the edge opposite corner k
    c0 = cot(p1 - p0, p2 - p0)  # weights edge (1,2)
    c1 = cot(p2 - p1, p0 - p1)  # weights edge (2,0)
    c2 = cot(p0 - p2, p1 - p2)  # weights edge (0,1)

    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([c0, c1, c2])

    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-w, -w, w, w])
    return SparseOperator(sp.coo_matrix((vals, (rows, cols)), shape=(V, V)))
