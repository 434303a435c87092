"""Independent numerical oracles used by the test suite.

These deliberately avoid the quadrature machinery under test: the inner
integral over a flat triangle is analytic, the outer integral is adaptive
(QUADPACK), and a Duffy-transformed rule validates the analytic formula.
"""

import numpy as np
from scipy import integrate


def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_potential(x, corners):
    """Analytic integral of 1/|x - y| over a flat triangle."""
    x = np.asarray(x, float)
    v = [np.asarray(c, float) for c in corners]
    n = np.cross(v[1] - v[0], v[2] - v[0])
    n = n / np.linalg.norm(n)
    h = float(np.dot(x - v[0], n))
    rho = x - h * n
    total = 0.0
    for i in range(3):
        a, b = v[i], v[(i + 1) % 3]
        t = (b - a) / np.linalg.norm(b - a)
        m = np.cross(t, n)  # outward in-plane edge normal
        p0 = float(np.dot(a - rho, m))
        sm = float(np.dot(a - rho, t))
        sp = float(np.dot(b - rho, t))
        rm = float(np.linalg.norm(x - a))
        rp = float(np.linalg.norm(x - b))
        r0sq = p0 * p0 + h * h
        num, den = rp + sp, rm + sm
        if num > 0 and den > 0:
            total += p0 * np.log(num / den)
        if h != 0.0:
            total -= abs(h) * (
                np.arctan2(p0 * sp, r0sq + abs(h) * rp)
                - np.arctan2(p0 * sm, r0sq + abs(h) * rm)
            )
    return total


def duffy_triangle_potential(x, corners, n1d=40):
    """Same integral by a Duffy-clustered tensor rule (validates the above)."""
    g, gw = gauss01(n1d)
    u, vq = np.meshgrid(g, g, indexing="ij")
    w2 = np.outer(gw, gw)
    v = [np.asarray(c, float) for c in corners]
    n = np.cross(v[1] - v[0], v[2] - v[0])
    n = n / np.linalg.norm(n)
    hub = x - np.dot(x - v[0], n) * n
    total = 0.0
    for i in range(3):
        a, b = v[i], v[(i + 1) % 3]
        e1, e2 = a - hub, b - a
        area2 = float(np.dot(np.cross(e1, e2), n))  # signed: hub may be outside
        y = hub[None, None, :] + u[..., None] * (e1[None, None, :] + vq[..., None] * e2[None, None, :])
        rr = np.linalg.norm(y - x[None, None, :], axis=-1)
        total += float((w2 * (u * area2) / rr).sum())
    return total


def galerkin_single_layer_entry(corners_test, corners_trial, tol=1e-11):
    """Adaptive outer integration of the analytic inner potential:
    independent value of the Galerkin single-layer pair integral
    (kernel 1/(4 pi r))."""
    ca = [np.asarray(c, float) for c in corners_test]

    def f(t, s):
        x = ca[0] + s * (ca[1] - ca[0]) + t * (ca[2] - ca[0])
        return triangle_potential(x, corners_trial)

    val, _ = integrate.dblquad(f, 0, 1, 0, lambda s: 1 - s, epsabs=tol, epsrel=tol)
    jac = np.linalg.norm(np.cross(ca[1] - ca[0], ca[2] - ca[0]))
    return val * jac / (4.0 * np.pi)
