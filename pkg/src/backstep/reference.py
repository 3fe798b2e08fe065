"""Closed-form reference kernel for the scalar constant-coefficient case.

For n = 1 with eps constant, phi = 0, lambda = lam0 constant and design
gain c, the transformation kernel has the classical closed form

    k(x, xi) = -mu xi I1(z) / z,   z = sqrt(mu (x^2 - xi^2) / eps),
    mu = (lam0 + c) / eps,

evaluated here through the power series of I1(z)/z (no special-function
library), which converges absolutely on the triangle.  Used as an
independent check of the characteristic solver; not part of the design
pipeline.
"""

from __future__ import annotations

import numpy as np

SERIES_TERMS = 60


def scalar_kernel(lam0: float, c: float, x, xi, eps: float = 1.0) -> np.ndarray:
    """k(x, xi) for the scalar constant-coefficient plant, vectorized."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    mu = (lam0 + c) / eps
    z2 = mu * (x**2 - xi**2)
    # I1(z)/z = (1/2) sum_{r>=0} (z^2/4)^r / (r! (r+1)!)
    series = np.zeros_like(z2)
    term = np.ones_like(z2)
    series += term
    for r in range(1, SERIES_TERMS):
        term = term * (z2 / 4.0) / (r * (r + 1))
        series += term
    return -mu * xi * 0.5 * series


def scalar_kernel_on_grid(lam0: float, c: float, m: int, eps: float = 1.0) -> np.ndarray:
    """k sampled at the triangle nodes of an m-interval grid; (M, M) array
    with zeros above the diagonal."""
    xs = np.linspace(0.0, 1.0, m + 1)
    X, XI = np.meshgrid(xs, xs, indexing="ij")
    out = scalar_kernel(lam0, c, X, XI, eps)
    out[XI > X] = 0.0
    return out
