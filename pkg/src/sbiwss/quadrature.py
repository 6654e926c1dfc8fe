"""Quadrature rules on intervals and on the reference triangle.

The reference triangle has vertices (0, 0), (1, 0), (0, 1); its rules carry
weights that sum to 1/2.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(n):
    """Collapsed (Duffy) Gauss rule with n*n points, exact to degree 2n-1.

    The collapsed direction uses Gauss-Jacobi(1, 0) points so that the
    Jacobian factor of the Duffy map is integrated exactly.
    """
    a, wa = roots_jacobi(n, 0.0, 0.0)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    a = 0.5 * (a + 1.0)
    wa = 0.5 * wa
    b = 0.5 * (b + 1.0)
    wb = 0.25 * wb
    # (a, b) in the unit square; x = a (1 - b), y = b.
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
    w = (WA * WB).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def composite_triangle_rule(n, m):
    """Triangle rule of order n applied on each of the m*m uniform sub-triangles."""
    pts, w = triangle_rule(n)
    if m == 1:
        return pts, w
    h = 1.0 / m
    out_p = []
    out_w = []
    for i in range(m):
        for j in range(m - i):
            # upright sub-triangle
            v0 = np.array([i * h, j * h])
            out_p.append(v0 + h * pts)
            out_w.append(h * h * w)
            if i + j < m - 1:
                # inverted sub-triangle with vertices (i+1, j+1), (i, j+1), (i+1, j)
                v1 = np.array([(i + 1) * h, (j + 1) * h])
                out_p.append(v1 - h * pts)
                out_w.append(h * h * w)
    p = np.vstack(out_p)
    ww = np.concatenate(out_w)
    p.setflags(write=False)
    ww.setflags(write=False)
    return p, ww
