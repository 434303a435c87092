"""Sparse surface Laplacians (primal and dual) and deflated pseudo-inverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import krylov
from .geometry import TriangleMesh
from .spaces import GramMatrix, barycentric_refinement

PRIMAL = "primal"
DUAL = "dual"


@dataclass(frozen=True)
class LaplacianMatrix:
    """Symmetric PSD stiffness matrix with the constants in its kernel."""

    matrix: sp.csr_matrix
    kind: str

    @property
    def shape(self):
        return self.matrix.shape


def _p1_stiffness(vertices: np.ndarray, triangles: np.ndarray) -> sp.csr_matrix:
    """Piecewise-linear stiffness with cotangent weights.

    Element matrix: K[i, j] = (e_i . e_j) / (4 A) with e_i the edge opposite
    vertex i, equivalent to -(cot a + cot b)/2 off-diagonal accumulation.
    """
    corners = vertices[triangles]
    e = np.empty_like(corners)
    e[:, 0] = corners[:, 2] - corners[:, 1]
    e[:, 1] = corners[:, 0] - corners[:, 2]
    e[:, 2] = corners[:, 1] - corners[:, 0]
    area = 0.5 * np.linalg.norm(
        np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1
    )
    if np.any(area <= 0):
        raise ValueError("degenerate triangle")
    local = np.einsum("tid,tjd->tij", e, e) / (4.0 * area)[:, None, None]
    nt = len(triangles)
    n = len(vertices)
    rows = np.broadcast_to(triangles[:, :, None], (nt, 3, 3)).ravel()
    cols = np.broadcast_to(triangles[:, None, :], (nt, 3, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return (mat + mat.T) * 0.5


def primal_laplace_beltrami(mesh: TriangleMesh) -> LaplacianMatrix:
    """Cotangent stiffness of the vertex hat functions on the surface."""
    return LaplacianMatrix(_p1_stiffness(mesh.vertices, mesh.triangles), PRIMAL)


def dual_laplacian(mesh: TriangleMesh) -> LaplacianMatrix:
    """Stiffness of the cell-associated dual piecewise-linear functions.

    Assembled on the transient barycentric refinement through the dual
    coefficient matrix; the refinement is discarded afterwards.  Since the
    dual functions partition unity, constants are in the kernel exactly.
    """
    ref_vertices, ref_triangles, coeff = barycentric_refinement(mesh)
    k_ref = _p1_stiffness(ref_vertices, ref_triangles)
    mat = (coeff.T @ k_ref @ coeff).tocsr()
    return LaplacianMatrix(((mat + mat.T) * 0.5).tocsr(), DUAL)


def pinv_apply(
    L: LaplacianMatrix | sp.spmatrix,
    G: GramMatrix | sp.spmatrix,
    rhs: np.ndarray,
    tol: float = 1e-10,
    maxit: int | None = None,
) -> np.ndarray:
    """Minimum-norm solve of the singular system L x = rhs.

    The right-hand side is first projected against the kernel of L (the
    constants) so the system is consistent; the returned solution is fixed
    to zero G-weighted mean.  Solved matrix-free by conjugate gradients.
    """
    lmat = L.matrix if isinstance(L, LaplacianMatrix) else L
    gmat = G.matrix if isinstance(G, GramMatrix) else G
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    if maxit is None:
        maxit = 10 * n
    projected = rhs - rhs.sum() / n
    x, report = krylov.conjugate_gradient(lambda v: lmat @ v, projected, tol=tol, maxit=maxit)
    if not report.converged and np.linalg.norm(projected) > 0:
        raise RuntimeError(
            f"inner CG for the Laplacian solve did not reach {tol} in {maxit} iterations"
        )
    g_ones = np.asarray(gmat.sum(axis=1)).ravel()
    x -= (g_ones @ x) / g_ones.sum()
    return x
