"""Iterative solvers and spectral estimation for symmetric operators.

All routines accept either a dense matrix or a callable ``x -> A @ x``.
Dot products use numpy's sequential reductions, so iteration counts are
reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal


class BreakdownError(RuntimeError):
    """Raised when CG meets nonpositive curvature: the operator is not PSD."""


class ConditionEstimateError(RuntimeError):
    """Raised when extreme Ritz values fail to settle within the iteration cap."""


@dataclass
class SolveReport:
    """Convergence record of one Krylov solve."""

    iterations: int
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    ritz_min: float | None = None
    ritz_max: float | None = None


def _as_matvec(A):
    if callable(A):
        return A
    M = np.asarray(A)

    def matvec(x):
        return M @ x

    return matvec


def conjugate_gradient(A, b, tol: float = 1e-8, maxit: int | None = None):
    """Conjugate gradients for a symmetric positive semi-definite operator.

    Returns ``(x, SolveReport)`` with the relative residual recorded at
    every iteration and the extreme Ritz values of the underlying Lanczos
    tridiagonal.  Nonpositive curvature raises :class:`BreakdownError`,
    which falsifies the PSD assumption rather than being a solver failure.
    """
    matvec = _as_matvec(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    if maxit is None:
        maxit = 10 * n
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n), SolveReport(0, [], True)

    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rho = float(r @ r)
    alphas: list[float] = []
    betas: list[float] = []
    history: list[float] = []
    converged = False
    it = 0
    while it < maxit:
        q = matvec(p)
        curvature = float(p @ q)
        if curvature <= 0.0:
            raise BreakdownError(
                f"nonpositive curvature p'Ap = {curvature:.3e} at iteration {it + 1}"
            )
        alpha = rho / curvature
        x += alpha * p
        r -= alpha * q
        rho_new = float(r @ r)
        beta = rho_new / rho
        alphas.append(alpha)
        betas.append(beta)
        rho = rho_new
        it += 1
        rel = np.sqrt(rho) / norm_b
        history.append(rel)
        if rel <= tol:
            # confirm with the true residual; the recurrence can drift
            true_rel = float(np.linalg.norm(b - matvec(x))) / norm_b
            history[-1] = true_rel
            if true_rel <= tol:
                converged = True
                break
        p = r + beta * p

    report = SolveReport(it, history, converged)
    report.ritz_min, report.ritz_max = _cg_ritz_extremes(alphas, betas)
    return x, report


def _cg_ritz_extremes(alphas, betas):
    """Extreme eigenvalues of the Lanczos tridiagonal implied by CG."""
    m = len(alphas)
    if m == 0:
        return None, None
    diag = np.empty(m)
    off = np.empty(max(m - 1, 0))
    diag[0] = 1.0 / alphas[0]
    for k in range(1, m):
        diag[k] = 1.0 / alphas[k] + betas[k - 1] / alphas[k - 1]
        off[k - 1] = np.sqrt(betas[k - 1]) / alphas[k - 1]
    if m == 1:
        return float(diag[0]), float(diag[0])
    vals = eigh_tridiagonal(diag, off, eigvals_only=True)
    return float(vals[0]), float(vals[-1])


def minres(A, b, tol: float = 1e-8, maxit: int | None = None):
    """Minimal-residual iteration for a symmetric (possibly indefinite) operator."""
    matvec = _as_matvec(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    if maxit is None:
        maxit = 10 * n
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n), SolveReport(0, [], True)

    x = np.zeros(n)
    v_old = np.zeros(n)
    v = b / norm_b
    beta = norm_b
    eta = norm_b
    c_old = c = 1.0
    s_old = s = 0.0
    w = np.zeros(n)
    w_old = np.zeros(n)
    history: list[float] = []
    converged = False
    it = 0
    while it < maxit:
        q = matvec(v)
        alpha = float(v @ q)
        q = q - alpha * v - beta * v_old
        beta_new = float(np.linalg.norm(q))

        # Givens QR update of the Lanczos tridiagonal
        delta = c * alpha - c_old * s * beta
        rho1 = np.hypot(delta, beta_new)
        rho2 = s * alpha + c_old * c * beta
        rho3 = s_old * beta
        if rho1 == 0.0:
            break
        c_new = delta / rho1
        s_new = beta_new / rho1

        w_new = (v - rho3 * w_old - rho2 * w) / rho1
        x = x + (c_new * eta) * w_new
        eta = -s_new * eta

        it += 1
        rel = abs(eta) / norm_b
        history.append(rel)
        if rel <= tol:
            true_rel = float(np.linalg.norm(b - matvec(x))) / norm_b
            history[-1] = true_rel
            if true_rel <= tol:
                converged = True
                break
        if beta_new == 0.0:  # invariant subspace reached
            true_rel = float(np.linalg.norm(b - matvec(x))) / norm_b
            history[-1] = true_rel
            converged = true_rel <= tol
            break

        v_old, v = v, q / beta_new
        w_old, w = w, w_new
        c_old, c = c, c_new
        s_old, s = s, s_new
        beta = beta_new

    return x, SolveReport(it, history, converged)


def estimate_condition(
    A,
    kernel_dim: int = 0,
    n: int | None = None,
    maxit: int = 300,
    rtol: float = 1e-4,
    seed: int = 0,
):
    """Extreme nonzero Ritz values of a symmetric PSD operator via Lanczos.

    Uses full reorthogonalization so ghost eigenvalues cannot pollute the
    estimate.  ``kernel_dim`` is the known (deflated) kernel dimension;
    Ritz values below ``1e-10 * lambda_max`` are attributed to it and
    discarded.  Returns ``(lambda_min_nonzero, lambda_max, cond)``.
    """
    matvec = _as_matvec(A)
    if n is None:
        if callable(A):
            raise ValueError("n must be given for a callable operator")
        n = np.asarray(A).shape[0]

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    cap = min(maxit, n)
    V = np.empty((n, cap), dtype=float)
    alphas: list[float] = []
    offs: list[float] = []
    prev = None
    settled = False
    for k in range(cap):
        V[:, k] = v
        w = matvec(v)
        alpha = float(v @ w)
        alphas.append(alpha)
        w = w - alpha * v
        if k > 0:
            w = w - offs[-1] * V[:, k - 1]
        # full reorthogonalization, applied twice
        basis = V[:, : k + 1]
        w -= basis @ (basis.T @ w)
        w -= basis @ (basis.T @ w)
        beta = float(np.linalg.norm(w))
        if k == 0:
            vals = np.array([alphas[0]])
        else:
            vals = eigh_tridiagonal(np.array(alphas), np.array(offs), eigvals_only=True)
        lmax = float(vals[-1])
        nonzero = vals[vals > max(lmax, 0.0) * 1e-10]
        ext = (float(nonzero[0]), lmax) if len(nonzero) else None
        if beta <= 1e-13 * max(abs(lmax), 1.0):
            prev = ext  # invariant subspace: Ritz values are exact
            settled = prev is not None
            break
        if ext is not None and prev is not None and k >= kernel_dim + 2:
            dmin = abs(ext[0] - prev[0]) / max(abs(ext[0]), 1e-300)
            dmax = abs(ext[1] - prev[1]) / max(abs(ext[1]), 1e-300)
            if dmin < rtol and dmax < rtol:
                prev = ext
                settled = True
                break
        prev = ext
        offs.append(beta)
        v = w / beta
    if not settled or prev is None:
        raise ConditionEstimateError(
            f"extreme Ritz values did not settle to {rtol} within {maxit} iterations"
        )
    lmin, lmax = prev
    return lmin, lmax, lmax / lmin


def orthonormal_columns(vectors) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the given vectors."""
    M = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
    q, r = np.linalg.qr(M)
    keep = np.abs(np.diag(r)) > 1e-12 * max(np.abs(np.diag(r)).max(), 1e-300)
    return q[:, keep]


def deflate(A, basis: np.ndarray):
    """Symmetric deflation: x -> P A P x with P = I - Q Q^T."""
    matvec = _as_matvec(A)
    Q = basis

    def deflated(x):
        y = x - Q @ (Q.T @ x)
        y = matvec(y)
        return y - Q @ (Q.T @ y)

    return deflated
