"""Multilayer symmetric transmission system: blocks, right-hand side, rescaling.

Unknowns are stacked as ``[V_1 .. V_N, p_1 .. p_M]``: per interface the
Dirichlet trace in the vertex (pyramid) basis and the current density in
the cell (patch) basis.  With an insulating exterior no current crosses the
outermost surface, so its p block (and test rows) are dropped.

Every scalar factor and sign of the transmission system lives in this
module; the operator blocks from :mod:`symmbem.bem_ops` are unit strength.
Sign convention fixed against the analytic layered-sphere solution: with
the local source potential ``v(r) = q.(r - r0) / (4 pi |r - r0|^3)`` of a
dipole in compartment s, the pyramid-tested rows of the interfaces
bounding s receive ``+(lambda, dv/dn)`` on the outer and ``-(lambda,
dv/dn)`` on the inner boundary, and the patch-tested rows receive
``-(pi, v)/sigma_s`` and ``+(pi, v)/sigma_s`` respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import bem_ops
from .geometry import NestedModel, TriangleMesh
from ._quadrature import TRI_RULES

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class DipoleSource:
    """Current dipole: position strictly inside one compartment, moment vector."""

    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float))
        if self.position.shape != (3,) or self.moment.shape != (3,):
            raise ValueError("position and moment must be 3-vectors")


def read_sources(path) -> list[DipoleSource]:
    """Sources file: one dipole per line, ``x y z qx qy qz``."""
    sources = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        vals = [float(t) for t in line.split()]
        if len(vals) != 6:
            raise ValueError(f"expected 6 numbers per source line, got {len(vals)}")
        sources.append(DipoleSource(vals[:3], vals[3:]))
    return sources


def write_sources(sources, path) -> None:
    lines = [
        " ".join(f"{v:.17g}" for v in [*s.position, *s.moment]) for s in sources
    ]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SystemLayout:
    """Offsets of the stacked unknown vector [V-blocks, then p-blocks]."""

    v_sizes: tuple
    p_sizes: tuple
    p_kept: tuple

    @property
    def num_interfaces(self) -> int:
        return len(self.v_sizes)

    @property
    def v_offsets(self) -> tuple:
        off, out = 0, []
        for s in self.v_sizes:
            out.append(off)
            off += s
        return tuple(out)

    @property
    def p_offsets(self) -> tuple:
        off = sum(self.v_sizes)
        out = []
        for s, kept in zip(self.p_sizes, self.p_kept):
            out.append(off if kept else None)
            if kept:
                off += s
        return tuple(out)

    @property
    def total(self) -> int:
        return sum(self.v_sizes) + sum(s for s, k in zip(self.p_sizes, self.p_kept) if k)

    def v_slice(self, i: int) -> slice:
        return slice(self.v_offsets[i], self.v_offsets[i] + self.v_sizes[i])

    def p_slice(self, i: int) -> slice | None:
        off = self.p_offsets[i]
        return None if off is None else slice(off, off + self.p_sizes[i])


def system_layout(model: NestedModel) -> SystemLayout:
    n = model.num_interfaces
    p_kept = [True] * n
    if model.insulating_exterior:
        p_kept[-1] = False
    return SystemLayout(
        tuple(m.num_vertices for m in model.surfaces),
        tuple(m.num_triangles for m in model.surfaces),
        tuple(p_kept),
    )


@dataclass(frozen=True)
class ConductivityScaling:
    """Symmetric diagonal block scaling factors; stored so solutions can be
    mapped back to unscaled variables."""

    v_factors: tuple
    p_factors: tuple


@dataclass
class BlockSystem:
    """Dense symmetric transmission matrix with layout and scaling record."""

    matrix: np.ndarray
    layout: SystemLayout
    conductivities: np.ndarray
    rhs: np.ndarray | None = None
    scaling: ConductivityScaling | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def scale_vector(self) -> np.ndarray:
        """Diagonal of the applied scaling W (ones when unscaled)."""
        w = np.ones(self.layout.total)
        if self.scaling is not None:
            for i in range(self.layout.num_interfaces):
                w[self.layout.v_slice(i)] = self.scaling.v_factors[i]
                ps = self.layout.p_slice(i)
                if ps is not None:
                    w[ps] = self.scaling.p_factors[i]
        return w

    def gauge_vectors(self) -> list[np.ndarray]:
        """Per-interface constant-trace directions (in current variables)."""
        out = []
        for i in range(self.layout.num_interfaces):
            g = np.zeros(self.layout.total)
            g[self.layout.v_slice(i)] = 1.0
            out.append(g)
        return out


def _calibrate_rows(matrix: np.ndarray, triangles: np.ndarray, target_row_sums: np.ndarray):
    """Distribute each row's constant-field defect over the row cell's vertices.

    The double layer applied to the constant 1 on a closed surface is known
    exactly (minus the enclosed solid angle over 4 pi); the Gauss rules meet
    it only to quadrature accuracy.  Restoring the identity exactly makes
    the simultaneous constant shift of all traces an exact null vector of
    the assembled system, which downstream deflation relies on.  The
    redistribution is a per-row perturbation of quadrature-error size.
    """
    defect = (target_row_sums - matrix.sum(axis=1)) / 3.0
    np.add.at(matrix, (np.arange(len(triangles))[:, None], triangles), defect[:, None])


def assemble_system(model: NestedModel, quadrature=None) -> BlockSystem:
    """Assemble the symmetric block matrix over all interface pairs.

    Only neighbouring interfaces couple; blocks for surface pairs further
    apart are identically zero.  All four operator blocks of a pair come
    from one shared quadrature sweep, and the double-layer blocks are
    calibrated to their exact constant-field row sums.
    """
    layout = system_layout(model)
    sigma = model.conductivities
    n = model.num_interfaces
    Z = np.zeros((layout.total, layout.total))

    def add(rows: slice | None, cols: slice | None, factor: float, mat: np.ndarray):
        if rows is None or cols is None or factor == 0.0:
            return
        Z[rows, cols] += factor * mat

    for i in range(n):
        ops = bem_ops.assemble_operators(
            model.surfaces[i], model.surfaces[i], quadrature=quadrature,
            target_index=i, source_index=i,
        )
        mesh = model.surfaces[i]
        dii = ops["D"].matrix
        _calibrate_rows(dii, mesh.triangles, -0.5 * mesh.areas)
        s_in, s_out = sigma[i], sigma[i + 1]
        vi, pi = layout.v_slice(i), layout.p_slice(i)
        add(vi, vi, -(s_in + s_out), ops["N"].matrix)
        add(vi, pi, -2.0, dii.T)
        add(pi, vi, -2.0, dii)
        if pi is not None:
            add(pi, pi, 1.0 / s_in + 1.0 / s_out, ops["S"].matrix)

    for i in range(n - 1):
        j = i + 1
        s_btw = sigma[j]  # conductivity of the compartment between the surfaces
        ops = bem_ops.assemble_operators(
            model.surfaces[i], model.surfaces[j], quadrature=quadrature,
            target_index=i, source_index=j,
        )
        vi, pi = layout.v_slice(i), layout.p_slice(i)
        vj, pj = layout.v_slice(j), layout.p_slice(j)
        nij, sij = ops["N"].matrix, ops["S"].matrix
        dij, dsij = ops["D"].matrix, ops["Dstar"].matrix
        # surface i lies inside surface j: constants map to -1 seen from i,
        # to 0 seen from j (applied to the transpose through Dstar columns)
        _calibrate_rows(dij, model.surfaces[i].triangles, -model.surfaces[i].areas)
        dsij_t = np.ascontiguousarray(dsij.T)
        _calibrate_rows(dsij_t, model.surfaces[j].triangles, np.zeros(model.surfaces[j].num_triangles))
        dsij = dsij_t.T
        add(vi, vj, s_btw, nij)
        add(vj, vi, s_btw, nij.T)
        add(pi, pj, -1.0 / s_btw, sij)
        add(pj, pi, -1.0 / s_btw, sij.T)
        add(vi, pj, 1.0, dsij)
        add(pj, vi, 1.0, dsij.T)
        add(pi, vj, 1.0, dij)
        add(vj, pi, 1.0, dij.T)

    return BlockSystem(Z, layout, np.asarray(sigma, dtype=float))


def _source_field(sources, points):
    """Local potential v and its gradient for unit-conductivity free space."""
    v = np.zeros(points.shape[0])
    grad = np.zeros_like(points)
    for s in sources:
        d = points - s.position
        dist2 = np.einsum("pd,pd->p", d, d)
        dist = np.sqrt(dist2)
        proj = d @ s.moment
        v += proj / (FOUR_PI * dist2 * dist)
        grad += (
            s.moment[None, :] / (FOUR_PI * dist2 * dist)[:, None]
            - (3.0 * proj / (FOUR_PI * dist2 * dist2 * dist))[:, None] * d
        )
    return v, grad


def _point_surface_distance(point: np.ndarray, mesh: TriangleMesh) -> float:
    """Exact distance from a point to a triangle surface."""
    c = mesh.corners
    n = mesh.normals
    d0 = point[None, :] - c[:, 0]
    height = np.einsum("td,td->t", d0, n)
    foot = point[None, :] - height[:, None] * n
    # barycentric test of the in-plane foot point
    v0 = c[:, 1] - c[:, 0]
    v1 = c[:, 2] - c[:, 0]
    v2 = foot - c[:, 0]
    d00 = np.einsum("td,td->t", v0, v0)
    d01 = np.einsum("td,td->t", v0, v1)
    d11 = np.einsum("td,td->t", v1, v1)
    d20 = np.einsum("td,td->t", v2, v0)
    d21 = np.einsum("td,td->t", v2, v1)
    denom = d00 * d11 - d01 * d01
    wb = (d11 * d20 - d01 * d21) / denom
    wc = (d00 * d21 - d01 * d20) / denom
    inside = (wb >= 0) & (wc >= 0) & (wb + wc <= 1)
    best = np.abs(height[inside]).min() if np.any(inside) else np.inf
    # edge distances
    for a_idx, b_idx in ((0, 1), (1, 2), (2, 0)):
        a, b = c[:, a_idx], c[:, b_idx]
        e = b - a
        t = np.clip(np.einsum("td,td->t", point[None, :] - a, e) / np.einsum("td,td->t", e, e), 0, 1)
        closest = a + t[:, None] * e
        best = min(best, float(np.linalg.norm(point[None, :] - closest, axis=1).min()))
    return float(best)


def assemble_rhs(model: NestedModel, sources, quadrature_points: int = 6) -> np.ndarray:
    """Galerkin right-hand side from dipole sources.

    Each source radiates its free-space field onto the interfaces bounding
    its compartment; integrals use the tensor Gauss rule per triangle (the
    integrand is analytic since sources are strictly interior).
    """
    layout = system_layout(model)
    rhs = np.zeros(layout.total)
    bary, weights = TRI_RULES[quadrature_points]

    by_compartment: dict[int, list[DipoleSource]] = {}
    for s in sources:
        comp = model.compartment_of(s.position)
        if comp > model.num_interfaces:
            raise ValueError("source lies outside the outermost surface")
        h = min(
            np.mean(m.diameters) for m in model.surfaces
        )
        for mesh in model.surfaces:
            if _point_surface_distance(s.position, mesh) <= 1e-6 * h:
                raise ValueError("source lies on an interface")
        by_compartment.setdefault(comp, []).append(s)

    for comp, comp_sources in by_compartment.items():
        sigma_s = model.conductivities[comp - 1]
        # interfaces bounding compartment comp: outer = comp-1 (0-based), inner = comp-2
        for iface, orient in ((comp - 1, +1.0), (comp - 2, -1.0)):
            if iface < 0 or iface >= model.num_interfaces:
                continue
            mesh = model.surfaces[iface]
            pts = np.einsum("qk,tkd->tqd", bary, mesh.corners).reshape(-1, 3)
            v, grad = _source_field(comp_sources, pts)
            v = v.reshape(mesh.num_triangles, -1)
            dn = np.einsum(
                "tqd,td->tq", grad.reshape(mesh.num_triangles, -1, 3), mesh.normals
            )
            wts = weights[None, :] * mesh.areas[:, None]
            # pyramid-tested rows: +- (lambda, dv/dn)
            contrib = np.einsum("tq,tq,qj->tj", wts, dn, bary)
            b = np.zeros(mesh.num_vertices)
            np.add.at(b, mesh.triangles.ravel(), contrib.ravel())
            rhs[layout.v_slice(iface)] += orient * b
            # patch-tested rows: -+ (pi, v) / sigma_s
            ps = layout.p_slice(iface)
            if ps is not None:
                c = np.einsum("tq,tq->t", wts, v)
                rhs[ps] += -orient * c / sigma_s

    # Net dipole flux through every closed interface vanishes exactly; the
    # Gauss rule meets that only approximately.  Remove the defect as a
    # constant test function so the load is consistent with the system's
    # exact gauge null vector.
    for iface, mesh in enumerate(model.surfaces):
        sl = layout.v_slice(iface)
        vertex_mass = np.zeros(mesh.num_vertices)
        np.add.at(vertex_mass, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
        rhs[sl] -= rhs[sl].sum() * vertex_mass / vertex_mass.sum()
    return rhs


def conductivity_rescale(system: BlockSystem) -> BlockSystem:
    """Symmetric two-sided diagonal block scaling against conductivity spread.

    V blocks scale by (sigma_in + sigma_out)^-1/2 and p blocks by
    (1/sigma_in + 1/sigma_out)^-1/2, removing the conductivity content of
    the diagonal blocks.  The record allows exact back-substitution, so the
    solution of the rescaled system maps to the original one.
    """
    if system.scaling is not None:
        raise ValueError("system is already rescaled")
    sigma = system.conductivities
    v_factors, p_factors = [], []
    for i in range(system.layout.num_interfaces):
        s_in, s_out = sigma[i], sigma[i + 1]
        v_factors.append(1.0 / np.sqrt(s_in + s_out))
        if system.layout.p_kept[i]:
            p_factors.append(1.0 / np.sqrt(1.0 / s_in + 1.0 / s_out))
        else:
            p_factors.append(np.nan)
    scaling = ConductivityScaling(tuple(v_factors), tuple(p_factors))
    probe = BlockSystem(system.matrix, system.layout, sigma, None, scaling)
    w = probe.scale_vector()
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("non-positive scale factor")
    matrix = (w[:, None] * system.matrix) * w[None, :]
    rhs = None if system.rhs is None else w * system.rhs
    return BlockSystem(matrix, system.layout, sigma, rhs, scaling)


def unscale_solution(system: BlockSystem, y: np.ndarray) -> np.ndarray:
    """Map a solution of the rescaled system back to original variables."""
    if system.scaling is None:
        return np.asarray(y, dtype=float).copy()
    return system.scale_vector() * y
