"""Volterra state transformation, its inverse, and discrete norms.

The forward map sends the plant state u to the target state
w(x) = u(x) - int_0^x K(x, xi) u(xi) dxi.  Quadrature is composite
trapezoidal throughout, matching the simulator's second-order spatial
discretization so residual orders compose predictably.  All functions are
pure; kernel fields are shared immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch
from .kernel import KernelField
from .problem import Grid


@dataclass
class StateField:
    """n-vector state sampled on the grid: values[b, i] = u_i(x_b).
    Boundary values are stored explicitly in rows 0 and m."""

    values: np.ndarray
    time: float
    grid: Grid

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.m + 1:
            raise ValueError(
                f"state must have {self.grid.m + 1} rows, got {self.values.shape}")

    @property
    def n(self) -> int:
        return self.values.shape[1]


def _trapezoid_weights(m: int, h: float) -> np.ndarray:
    # W[a, b] = weight of node b in the [0, x_a] integral
    W = np.zeros((m + 1, m + 1))
    for a in range(1, m + 1):
        W[a, : a + 1] = h
        W[a, 0] = h / 2
        W[a, a] = h / 2
    return W


def _check_grids(fld: KernelField, state: StateField):
    if fld.m != state.grid.m:
        raise GridMismatch(
            f"kernel grid (m={fld.m}) does not match state grid (m={state.grid.m})")
    if fld.n != state.n:
        raise GridMismatch(
            f"kernel has {fld.n} states but the field has {state.n}")


def forward_transform(fld: KernelField, f: StateField) -> StateField:
    """g(x) = f(x) - int_0^x K(x, xi) f(xi) dxi (trapezoid); g(0) = f(0)."""
    _check_grids(fld, f)
    W = _trapezoid_weights(fld.m, fld.grid.h)
    integral = np.einsum("ab,ijab,bj->ai", W, fld.K, f.values, optimize=True)
    return StateField(values=f.values - integral, time=f.time, grid=f.grid)


def inverse_transform(fld: KernelField, g: StateField) -> StateField:
    """Solve f(x) = g(x) + int_0^x K(x, xi) f(xi) dxi by marching in x.

    The discrete operator is block unit-lower-triangular up to the (h/2)
    diagonal correction, so the march is a direct solve; the round trip with
    :func:`forward_transform` is exact to rounding.
    """
    _check_grids(fld, g)
    m, n, h = fld.m, fld.n, fld.grid.h
    K = fld.K
    f = np.empty_like(g.values)
    f[0] = g.values[0]
    eye = np.eye(n)
    for a in range(1, m + 1):
        acc = 0.5 * K[:, :, a, 0].dot(f[0])
        for b in range(1, a):
            acc += K[:, :, a, b].dot(f[b])
        rhs = g.values[a] + h * acc
        f[a] = np.linalg.solve(eye - (h / 2.0) * K[:, :, a, a], rhs)
    return StateField(values=f, time=g.time, grid=g.grid)


def norms(f: StateField) -> tuple[float, float]:
    """Squared L2 and H1 quantities: int |f|^2 and int |f|^2 + |f_x|^2.

    The spatial derivative uses centered differences (second-order one-sided
    at the ends); integrals are trapezoidal.  Note these are the *squared*
    norms, as used throughout the package.
    """
    h = f.grid.h
    v = f.values
    l2 = float(np.trapezoid((v**2).sum(axis=1), dx=h))
    dv = np.gradient(v, h, axis=0, edge_order=2)
    h1 = l2 + float(np.trapezoid((dv**2).sum(axis=1), dx=h))
    return l2, h1


def transform_bounds(fld: KernelField) -> tuple[float, float]:
    """(K1, K2) with squared-H1 bounds H1(g) <= K1 H1(f), H1(f) <= K2 H1(g).

    Computed from the kernel field's max norms: with kbar = sup_T |K| and
    kxbar = sup_T |K_x| (Frobenius, finite differences for the derivative),
    K1 = 1 + kbar (1 + kxbar) and K2 = K1 exp(kbar) (Gronwall for the
    inverse Volterra map).
    """
    m, h = fld.m, fld.grid.h
    tri = np.tril(np.ones((m + 1, m + 1), dtype=bool))
    fro = np.sqrt((fld.K**2).sum(axis=(0, 1)))
    kbar = float(fro[tri].max())
    dK = (fld.K[:, :, 1:, :] - fld.K[:, :, :-1, :]) / h
    fro_x = np.sqrt((dK**2).sum(axis=(0, 1)))
    valid = np.tril(np.ones((m, m + 1), dtype=bool))  # both (a, b), (a+1, b) in T
    kxbar = float(fro_x[valid].max())
    k1 = 1.0 + kbar * (1.0 + kxbar)
    k2 = k1 * float(np.exp(min(kbar, 700.0)))
    return k1, k2
