"""Spectral preconditioner: sandwich the system between sparse Laplacian
solves and Gram rescalings so its conditioning stops tracking mesh size.

The preconditioned operator is ``P_defl M Z P Z M P_defl`` where M is the
blockwise lumped inverse square root of the Gram matrices, P applies per
interface an (regularized) inverse surface Laplacian on the vertex rows
and the sparse dual-Laplacian sandwich on the cell rows, and ``P_defl``
projects out the known constant-trace gauge directions.  Everything is
matrix-free except the dense system blocks themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import krylov
from .formulation import BlockSystem, unscale_solution
from .geometry import TriangleMesh
from .laplacians import dual_laplacian, pinv_apply, primal_laplace_beltrami
from .spaces import gram_p1, lumped_inverse_sqrt, mixed_gram_dual, pyramid_space, gram_p0, patch_space

PRIMAL_MODES = ("regularized", "pinv")


@dataclass
class PrecondOperator:
    """Matrix-free preconditioned operator with its deflation projector."""

    system: BlockSystem
    m_diag: np.ndarray
    primal_solvers: list
    dual_solvers: list
    deflation: np.ndarray
    inner_tol: float

    @property
    def size(self) -> int:
        return self.system.size

    def project(self, x: np.ndarray) -> np.ndarray:
        q = self.deflation
        return x - q @ (q.T @ x)

    def apply_p(self, x: np.ndarray) -> np.ndarray:
        """Blockwise application of the sparse (inverse-)Laplacian factors."""
        out = np.empty_like(x)
        layout = self.system.layout
        for i in range(layout.num_interfaces):
            vs = layout.v_slice(i)
            out[vs] = self.primal_solvers[i](x[vs])
            ps = layout.p_slice(i)
            if ps is not None:
                out[ps] = self.dual_solvers[i](x[ps])
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = self.project(np.asarray(x, dtype=float))
        y = self.m_diag * y
        y = self.system.matrix @ y
        y = self.apply_p(y)
        y = self.system.matrix @ y
        y = self.m_diag * y
        return self.project(y)

    def preconditioned_rhs(self) -> np.ndarray:
        if self.system.rhs is None:
            raise ValueError("system has no right-hand side")
        y = self.apply_p(self.system.rhs)
        y = self.system.matrix @ y
        return self.project(self.m_diag * y)


def _primal_solver(mesh: TriangleMesh, mode: str, inner_tol: float):
    """Inverse-Laplacian application on the vertex (pyramid) rows.

    ``regularized`` shifts the constant mode to a finite O(1) eigenvalue
    with a rank-one lumped-mass term, making the inverse well defined on
    the whole space; the preconditioned operator's kernel then reduces to
    the system's own gauge.  ``pinv`` is the literal deflated
    pseudo-inverse (kept for comparison; it widens the kernel with
    mesh-dependent directions and degrades solution recovery).
    """
    lap = primal_laplace_beltrami(mesh)
    gram = gram_p1(pyramid_space(mesh))
    if mode == "pinv":
        def solver(rhs: np.ndarray) -> np.ndarray:
            return pinv_apply(lap, gram, rhs, tol=inner_tol)

        return solver

    lumped = np.asarray(gram.matrix.sum(axis=1)).ravel()
    total = lumped.sum()
    beta = 8.0 * np.pi / mesh.total_area  # constant-mode eigenvalue, O(1) scale
    lmat = lap.matrix

    def matvec(v: np.ndarray) -> np.ndarray:
        return lmat @ v + (beta / total) * (lumped @ v) * lumped

    def solver(rhs: np.ndarray) -> np.ndarray:
        x, report = krylov.conjugate_gradient(matvec, rhs, tol=inner_tol)
        if not report.converged and np.linalg.norm(rhs) > 0:
            raise RuntimeError("inner CG for the regularized Laplacian stalled")
        return x

    return solver


def _dual_solver(mesh: TriangleMesh):
    """Sparse dual sandwich on the cell (patch) rows.

    A patch-tested vector is converted to dual-function coefficients
    through the transposed mixed Gram, run through the dual Laplacian, and
    mapped back through the mixed Gram: ``G~^-1 (Lap~ + shift) G~^-T``.
    With this pairing the constant field maps to the exact coefficient
    vector of ones (dual partition of unity), so the area vector is the
    sandwich's natural null direction; the rank-one shift then places that
    mode at the high-frequency tail level of the composed operator instead
    of zero, keeping the whole map symmetric positive definite.
    """
    gmix = mixed_gram_dual(mesh).tocsc()
    lap = dual_laplacian(mesh).matrix
    masses = np.asarray(gmix.sum(axis=1)).ravel()  # dual-function masses
    total = masses.sum()
    beta = np.pi / mesh.total_area
    lu = splu(gmix)

    def solver(rhs: np.ndarray) -> np.ndarray:
        a = lu.solve(rhs, trans="T")
        b = lap @ a + (beta / total) * (masses @ a) * masses
        return lu.solve(b)

    return solver


def build(
    system: BlockSystem,
    meshes: list[TriangleMesh],
    primal_mode: str = "regularized",
    inner_tol: float = 1e-10,
) -> PrecondOperator:
    """Assemble the diagonal Gram factors, the per-interface Laplacian
    applicators and the gauge deflation basis for a (rescaled) system."""
    if primal_mode not in PRIMAL_MODES:
        raise ValueError(f"primal_mode must be one of {PRIMAL_MODES}")
    layout = system.layout
    if len(meshes) != layout.num_interfaces:
        raise ValueError("one mesh per interface required")

    m_diag = np.empty(layout.total)
    primal_solvers = []
    dual_solvers = []
    for i, mesh in enumerate(meshes):
        m_diag[layout.v_slice(i)] = lumped_inverse_sqrt(gram_p1(pyramid_space(mesh)))
        ps = layout.p_slice(i)
        if ps is not None:
            m_diag[ps] = lumped_inverse_sqrt(gram_p0(patch_space(mesh)))
        primal_solvers.append(_primal_solver(mesh, primal_mode, inner_tol))
        dual_solvers.append(_dual_solver(mesh) if ps is not None else None)

    # Deflation = the operator's actual kernel, pulled back through M: with
    # an insulating exterior the system annihilates a simultaneous constant
    # shift of all traces (the potential gauge); with a conducting exterior
    # the decay condition at infinity fixes the gauge and nothing is deflated.
    basis = []
    if system.conductivities[-1] == 0.0:
        gauge = sum(system.gauge_vectors())
        basis.append(gauge / system.scale_vector() / m_diag)
    deflation = (
        krylov.orthonormal_columns(basis) if basis else np.zeros((layout.total, 0))
    )
    return PrecondOperator(system, m_diag, primal_solvers, dual_solvers, deflation, inner_tol)


def apply(op: PrecondOperator, x: np.ndarray) -> np.ndarray:
    """Deflected preconditioned operator product applied to a vector."""
    return op.apply(x)


def recover_solution(op: PrecondOperator, y: np.ndarray, tol: float = 1e-8):
    """Map a preconditioned solution back to physical unknowns.

    The Gram factor undoes M and the conductivity scaling is undone last;
    the deflated gauge directions stay at the value the minimum-norm Krylov
    iterate assigned them (a pure additive constant, fixed downstream).
    Returns ``(x, relative_residual)`` of the assembled (rescaled) system,
    with the residual measured orthogonally to the deflated directions.
    """
    system = op.system
    if system.rhs is None:
        raise ValueError("system has no right-hand side")
    x = op.m_diag * np.asarray(y, dtype=float)
    r = system.matrix @ x - system.rhs
    if op.deflation.shape[1]:
        # no solution can reduce the load component along the exact kernel
        kernel = krylov.orthonormal_columns([op.m_diag * q for q in op.deflation.T])
        r = r - kernel @ (kernel.T @ r)
    residual = float(np.linalg.norm(r) / np.linalg.norm(system.rhs))
    if residual > 10.0 * tol:
        raise RuntimeError(
            f"recovered solution residual {residual:.3e} exceeds 10 x {tol:.1e}: "
            "deflation inconsistent with the assembled system"
        )
    return unscale_solution(system, x), residual


def solve(
    system: BlockSystem,
    meshes: list[TriangleMesh],
    tol: float = 1e-8,
    maxit: int | None = None,
    primal_mode: str = "regularized",
    inner_tol: float = 1e-10,
):
    """Convenience pipeline: build the operator, run CG, recover the solution.

    Returns ``(x, report, residual)`` with x in unscaled physical variables.
    """
    op = build(system, meshes, primal_mode=primal_mode, inner_tol=inner_tol)
    rhs_p = op.preconditioned_rhs()
    y, report = krylov.conjugate_gradient(op.apply, rhs_p, tol=tol, maxit=maxit)
    x, residual = recover_solution(op, y, tol=tol)
    return x, report, residual
