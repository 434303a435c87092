"""Piecewise-constant and piecewise-linear spaces, Gram matrices, dual Gram."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .geometry import TriangleMesh


class Kind(Enum):
    PATCH = "patch"      # piecewise constant, one dof per cell
    PYRAMID = "pyramid"  # continuous piecewise linear, one dof per vertex


@dataclass(frozen=True)
class FunctionSpace:
    mesh: TriangleMesh
    kind: Kind

    @property
    def dof_count(self) -> int:
        if self.kind is Kind.PATCH:
            return self.mesh.num_triangles
        return self.mesh.num_vertices


def patch_space(mesh: TriangleMesh) -> FunctionSpace:
    return FunctionSpace(mesh, Kind.PATCH)


def pyramid_space(mesh: TriangleMesh) -> FunctionSpace:
    return FunctionSpace(mesh, Kind.PYRAMID)


@dataclass(frozen=True)
class GramMatrix:
    """Sparse symmetric matrix of L2 inner products of basis pairs."""

    matrix: sp.csr_matrix
    kind: Kind

    @property
    def shape(self):
        return self.matrix.shape


def gram_p0(space: FunctionSpace) -> GramMatrix:
    """Diagonal patch Gram: entry (n, n) is the area of triangle n."""
    if space.kind is not Kind.PATCH:
        raise ValueError("gram_p0 expects a patch space")
    areas = space.mesh.areas
    if np.any(areas <= 0):
        raise ValueError("mesh has a degenerate triangle")
    return GramMatrix(sp.diags(areas).tocsr(), Kind.PATCH)


def gram_p1(space: FunctionSpace) -> GramMatrix:
    """Consistent pyramid mass matrix: per triangle A/6 diagonal, A/12 off."""
    if space.kind is not Kind.PYRAMID:
        raise ValueError("gram_p1 expects a pyramid space")
    mesh = space.mesh
    areas = mesh.areas
    if np.any(areas <= 0):
        raise ValueError("mesh has a degenerate triangle")
    t = mesh.triangles
    n = mesh.num_vertices
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(t[:, i])
            cols.append(t[:, j])
            vals.append(areas * (1.0 / 6.0 if i == j else 1.0 / 12.0))
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    m = (m + m.T) * 0.5  # symmetrize exactly
    return GramMatrix(m, Kind.PYRAMID)


def lumped_inverse_sqrt(gram: GramMatrix) -> np.ndarray:
    """Diagonal of the lumped inverse square root: (row sum of G) ** -1/2.

    Exact for the patch Gram (already diagonal); spectrally equivalent mass
    lumping for the pyramid Gram.
    """
    row_sums = np.asarray(gram.matrix.sum(axis=1)).ravel()
    if np.any(row_sums <= 0):
        raise ValueError("non-positive Gram row sum")
    return 1.0 / np.sqrt(row_sums)


def barycentric_refinement(mesh: TriangleMesh):
    """Six-way barycentric refinement used transiently by dual-space assembly.

    Returns ``(ref_vertices, ref_triangles, coefficients)`` where
    ``coefficients`` is the sparse ``(n_ref_vertices, n_cells)`` matrix whose
    column m holds the nodal values of the dual piecewise-linear function of
    cell m on the refinement: 1 at the cell barycenter, 1/2 at the midpoints
    of its edges, 1/valence at its primal vertices.  Columns sum to one at
    every node, so the dual functions partition unity.
    """
    nv = mesh.num_vertices
    nc = mesh.num_triangles
    t = mesh.triangles

    edges = mesh.edges
    edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    ne = len(edges)

    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    bary = mesh.centroids
    ref_vertices = np.concatenate([mesh.vertices, mid, bary])

    def eid(a, b):
        return edge_index[(a, b) if a < b else (b, a)]

    ref_triangles = np.empty((6 * nc, 3), dtype=np.int64)
    for c in range(nc):
        v0, v1, v2 = (int(x) for x in t[c])
        m01 = nv + eid(v0, v1)
        m12 = nv + eid(v1, v2)
        m20 = nv + eid(v2, v0)
        b = nv + ne + c
        ref_triangles[6 * c : 6 * c + 6] = [
            (v0, m01, b),
            (m01, v1, b),
            (v1, m12, b),
            (m12, v2, b),
            (v2, m20, b),
            (m20, v0, b),
        ]

    valence = mesh.vertex_triangle_count.astype(float)
    rows, cols, vals = [], [], []
    # primal vertices: 1/valence for each incident cell
    rows.append(t.ravel())
    cols.append(np.repeat(np.arange(nc), 3))
    vals.append(1.0 / valence[t.ravel()])
    # edge midpoints: 1/2 for each of the (exactly two) incident cells
    edge_rows, edge_cols = [], []
    for c in range(nc):
        v0, v1, v2 = (int(x) for x in t[c])
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            edge_rows.append(nv + eid(a, b))
            edge_cols.append(c)
    rows.append(np.array(edge_rows))
    cols.append(np.array(edge_cols))
    vals.append(np.full(len(edge_rows), 0.5))
    # barycenters: 1 for the owning cell
    rows.append(nv + ne + np.arange(nc))
    cols.append(np.arange(nc))
    vals.append(np.ones(nc))

    coefficients = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(ref_vertices), nc),
    ).tocsr()
    return ref_vertices, ref_triangles, coefficients


def mixed_gram_dual(mesh: TriangleMesh) -> sp.csr_matrix:
    """Cell-by-cell Gram between dual piecewise-linear and patch functions.

    Entry (m, n) is the integral of the dual function of cell m over cell n.
    Row and column sums both equal the cell areas (double partition of
    unity).  The barycentric refinement is built transiently and discarded.
    """
    ref_vertices, ref_triangles, coeff = barycentric_refinement(mesh)
    ref = TriangleMesh(ref_vertices, ref_triangles)
    if np.any(ref.areas <= 0):
        raise ValueError("degenerate triangle in barycentric refinement")
    # Integral of each refinement hat over each parent cell: area/3 per
    # refined triangle corner, accumulated onto the owning cell.
    nc = mesh.num_triangles
    owner = np.repeat(np.arange(nc), 6)
    rows = ref_triangles.ravel()
    cols = np.repeat(owner, 3)
    vals = np.repeat(ref.areas / 3.0, 3)
    hat_over_cell = sp.coo_matrix(
        (vals, (rows, cols)), shape=(len(ref_vertices), nc)
    ).tocsr()
    return (coeff.T @ hat_over_cell).tocsr()


def mixed_gram_p0_p1(mesh: TriangleMesh) -> sp.csr_matrix:
    """Gram between patch (rows) and pyramid (columns) bases: A/3 per corner."""
    nc = mesh.num_triangles
    rows = np.repeat(np.arange(nc), 3)
    cols = mesh.triangles.ravel()
    vals = np.repeat(mesh.areas / 3.0, 3)
    return sp.coo_matrix((vals, (rows, cols)), shape=(nc, mesh.num_vertices)).tocsr()
