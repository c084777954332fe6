"""Jacobian-field mesh deformation via a Poisson solve.

A per-face 3x3 Jacobian field J parameterizes the deformation; vertex
positions are recovered by solving L V = G^T A J, where L is the cotangent
Laplacian, G the stacked per-face gradient operator and A the face-area mass
matrix (so L = G^T A G exactly and J = init_jacobians(mesh) reproduces the
input vertices). The system is anchored at vertex 0 during the solve and the
result is translated back to the original centroid. Also provides the two
baseline deformation parameterizations used for ablation (direct vertex
coordinates, trilinear 3D offset grid).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .mesh import Mesh, MeshError
from .operators import build_gradient_operator, build_laplacian, build_mass_matrix


class JacobianField:
    """Per-face 3x3 matrices, shape (T, 3, 3)."""

    def __init__(self, matrices):
        m = np.ascontiguousarray(matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1:] != (3, 3):
            raise ValueError(f"expected (T,3,3), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite Jacobian entries")
        self.matrices = m

    @property
    def n_faces(self):
        return len(self.matrices)

    def flat(self):
        return self.matrices.reshape(-1, 3)

    def copy(self):
        return JacobianField(self.matrices.copy())


def init_jacobians(mesh: Mesh) -> JacobianField:
    """Per-face gradients of the three coordinate functions (identity field)."""
    G = build_gradient_operator(mesh)
    return JacobianField((G @ mesh.vertices).reshape(-1, 3, 3))


@dataclass
class PoissonSystem:
    mesh: Mesh
    laplacian: sp.csr_matrix
    grad_op: sp.csr_matrix
    mass: sp.csr_matrix
    anchor: int
    centroid: np.ndarray
    _factor: object = field(default=None, repr=False)

    @classmethod
    def build(cls, mesh: Mesh, anchor: int = 0) -> "PoissonSystem":
        G = build_gradient_operator(mesh).matrix
        A = build_mass_matrix(mesh).matrix
        L = (G.T @ A @ G).tocsr()

        n_comp, labels = csgraph.connected_components(
            abs(L) > 0, directed=False)
        if n_comp > 1:
            sizes = np.bincount(labels)
            raise MeshError(
                f"mesh has {n_comp} connected components (sizes {sizes.tolist()}); "
                "the Poisson system is singular")
        keep = np.arange(mesh.n_vertices) != anchor
        Lrr = L[keep][:, keep].tocsc()
        factor = spla.splu(Lrr)
        sys = cls(mesh=mesh, laplacian=L, grad_op=G, mass=A, anchor=anchor,
                  centroid=mesh.centroid())
        sys._factor = factor
        return sys

    def solve(self, J: JacobianField) -> np.ndarray:
        """V' = argmin ||L V - G^T A J||^2, recentred to the original centroid."""
        if J.n_faces != self.mesh.n_faces:
            raise ValueError("Jacobian field does not match mesh topology")
        rhs = self.grad_op.T @ (self.mass @ J.flat())  # (V, 3)
        anchor = self.anchor
        v0 = self.mesh.vertices[anchor]
        keep = np.arange(self.mesh.n_vertices) != anchor
        rhs_free = rhs[keep] - self.laplacian[keep][:, [anchor]].toarray() * v0[None, :]
        x = self._factor.solve(rhs_free)
        out = np.empty_like(self.mesh.vertices)
        out[keep] = x
        out[anchor] = v0
        out += self.centroid - out.mean(axis=0)
        return out

    def adjoint(self, grad_vertices: np.ndarray) -> JacobianField:
        """Gradient wrt J of any scalar with the given gradient wrt solve()."""
        g = np.asarray(grad_vertices, dtype=np.float64)
        g = g - g.mean(axis=0)  # adjoint of the centroid restoration
        keep = np.arange(self.mesh.n_vertices) != self.anchor
        u_free = self._factor.solve(g[keep])  # L is symmetric
        u = np.zeros_like(g)
        u[keep] = u_free
        grad_flat = self.mass @ (self.grad_op @ u)
        return JacobianField(grad_flat.reshape(-1, 3, 3))


def poisson_solve(system: PoissonSystem, J: JacobianField) -> np.ndarray:
    return system.solve(J)


def poisson_adjoint(system: PoissonSystem, grad_vertices: np.ndarray) -> JacobianField:
    return system.adjoint(grad_vertices)


# ---------------------------------------------------------------------------
# Uniform-Laplacian smoothness loss (mean-per-element normalization so the
# weight is resolution independent)


def uniform_laplacian(mesh: Mesh) -> sp.csr_matrix:
    return build_laplacian(mesh, "uniform").matrix


def laplacian_smooth_loss(L: sp.csr_matrix, vertices: np.ndarray,
                          reference: np.ndarray | None = None) -> float:
    r = L @ vertices
    if reference is not None:
        r = r - reference
    return float(np.sum(r ** 2) / r.size)


def laplacian_smooth_grad(L: sp.csr_matrix, vertices: np.ndarray,
                          reference: np.ndarray | None = None) -> np.ndarray:
    r = L @ vertices
    if reference is not None:
        r = r - reference
    return (2.0 / r.size) * (L.T @ r)


def mesh_roughness(mesh_or_vertices, faces=None) -> float:
    """Uniform-Laplacian roughness score used for deformer comparisons."""
    if isinstance(mesh_or_vertices, Mesh):
        m = mesh_or_vertices
    else:
        m = Mesh(mesh_or_vertices, faces, validate=False)
    return laplacian_smooth_loss(uniform_laplacian(m), m.vertices)


# ---------------------------------------------------------------------------
# Deformation parameterizations (Jacobian field + the two ablation baselines)


class JacobianDeformer:
    """Free variables: the per-face Jacobian entries."""

    name = "jacobian"

    def __init__(self, mesh: Mesh):
        self.system = PoissonSystem.build(mesh)
        self.params = init_jacobians(mesh).matrices.copy()

    def vertices(self, params) -> np.ndarray:
        return self.system.solve(JacobianField(params))

    def grad_params(self, params, grad_vertices) -> np.ndarray:
        return self.system.adjoint(grad_vertices).matrices


class VertexDeformer:
    """Free variables: the vertex coordinates themselves."""

    name = "vertex"

    def __init__(self, mesh: Mesh):
        self.params = mesh.vertices.copy()

    def vertices(self, params) -> np.ndarray:
        return np.asarray(params, dtype=np.float64)

    def grad_params(self, params, grad_vertices) -> np.ndarray:
        return np.asarray(grad_vertices, dtype=np.float64)


class Grid3DDeformer:
    """Free variables: a trilinear grid of 3D offsets over the mesh bbox."""

    name = "grid3d"

    def __init__(self, mesh: Mesh, grid_size: int = 8):
        self.base = mesh.vertices.copy()
        self.grid_size = g = grid_size
        lo, hi = mesh.bbox()
        span = np.maximum(hi - lo, 1e-9)
        coords = (mesh.vertices - lo) / span * (g - 1)
        i0 = np.clip(np.floor(coords).astype(np.int64), 0, g - 2)
        f = coords - i0
        V = mesh.n_vertices
        rows, cols, vals = [], [], []
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (np.where(dx, f[:, 0], 1 - f[:, 0])
                         * np.where(dy, f[:, 1], 1 - f[:, 1])
                         * np.where(dz, f[:, 2], 1 - f[:, 2]))
                    node = ((i0[:, 0] + dx) * g + (i0[:, 1] + dy)) * g + (i0[:, 2] + dz)
                    rows.append(np.arange(V))
                    cols.append(node)
                    vals.append(w)
        self.weights = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(V, g ** 3))
        self.params = np.zeros((g ** 3, 3))

    def vertices(self, params) -> np.ndarray:
        return self.base + self.weights @ params

    def grad_params(self, params, grad_vertices) -> np.ndarray:
        return self.weights.T @ np.asarray(grad_vertices, dtype=np.float64)


DEFORMERS = {
    "jacobian": JacobianDeformer,
    "vertex": VertexDeformer,
    "grid3d": Grid3DDeformer,
}
