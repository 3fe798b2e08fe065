"""Coupled transformation-kernel solver.

Assembles the first-order reduction (F1..F4), solves the coupled (K, L)
hyperbolic system on the triangle {0 <= xi <= x <= 1} by successive
approximation along characteristics, verifies residuals against the original
second-order kernel system and its boundary conditions, and extracts the
trace-coupling matrix G(x).

A solve is a single deterministic computation (fixed sweep order, no
parallel reductions); independent solves on different inputs can run
concurrently since all inputs are immutable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from ._accel import backend
from .errors import GridTooCoarse, NoConvergence, StructureViolation
from .problem import Grid, ValidatedProblem, as_coeffs, poly

#: Cap on characteristic sub-steps per grid cell before the grid is declared
#: unable to resolve the slopes.
SUBSTEP_CAP = 64

SCHEME_ID = "characteristics-picard"


# ---------------------------------------------------------------------------
# first-order reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReductionFields:
    """F1(x), F2(xi), F3(xi), F4(x) sampled at grid nodes; shape (n, n, M).

    F1 depends only on x and F2 only on xi:
        (F1)_ij = (delta_ij eps_i'(x)/2 + phi_ij(x)) / (sqrt(eps_i) + sqrt(eps_j))
        (F2)_ij = (delta_ij eps_i'(xi)/2 - phi_ij(xi)) / (sqrt(eps_i) + sqrt(eps_j))
        F3 = Lambda - Phi' - F2' sqrt(Sigma) - F2^2
        F4 = C + sqrt(Sigma) F1' + F1^2
    All derivatives are evaluated analytically from the polynomial data.
    """

    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray
    grid: Grid


def _rational_F(spec, x, sign):
    """F1 (sign=+1) or F2 (sign=-1) and its analytic derivative at points x."""
    n = spec.n
    x = np.asarray(x, dtype=float)
    eps = spec.eval_sigma(x)              # (M, n)
    deps = spec.eval_sigma_prime(x)
    phi = spec.eval_phi(x)                # (M, n, n)
    dphi = spec.eval_phi_prime(x)
    seps = np.sqrt(eps)
    dseps = deps / (2.0 * seps)

    F = np.empty((n, n, x.shape[0]))
    dF = np.empty_like(F)
    for i in range(n):
        for j in range(n):
            num = sign * phi[:, i, j]
            dnum = sign * dphi[:, i, j]
            if i == j:
                num = num + 0.5 * deps[:, i]
                # second derivative of eps_i
                d2 = poly(spec.sigma[i]).deriv(2)(x)
                dnum = dnum + 0.5 * d2
            den = seps[:, i] + seps[:, j]
            dden = dseps[:, i] + dseps[:, j]
            F[i, j] = num / den
            dF[i, j] = (dnum * den - num * dden) / den**2
    return F, dF


def compute_reduction(validated: ValidatedProblem, C, grid: Grid) -> ReductionFields:
    """Assemble the reduction fields for a validated plant and gain diagonal C.

    The invariant formulas hold exactly at grid nodes because every
    derivative comes from the polynomial coefficients, not from finite
    differences.  Denominators sqrt(eps_i) + sqrt(eps_j) are positive by
    validation.
    """
    spec = validated.spec
    n = spec.n
    x = grid.x
    c = np.asarray(C, dtype=float).reshape(n)

    F1, dF1 = _rational_F(spec, x, +1.0)
    F2, dF2 = _rational_F(spec, x, -1.0)

    seps = np.sqrt(spec.eval_sigma(x))    # (M, n)
    lam = spec.eval_lambda(x)             # (M, n, n)
    dphi = spec.eval_phi_prime(x)

    # F3(xi) = Lambda - Phi' - F2' sqrt(Sigma) - F2^2   (right-multiplied diag)
    F3 = (lam.transpose(1, 2, 0) - dphi.transpose(1, 2, 0)
          - dF2 * seps.T[np.newaxis, :, :]
          - np.einsum("ikm,kjm->ijm", F2, F2))
    # F4(x) = C + sqrt(Sigma) F1' + F1^2   (left-multiplied diag)
    F4 = (np.einsum("ij,m->ijm", np.diag(c), np.ones(x.shape[0]))
          + dF1 * seps.T[:, np.newaxis, :]
          + np.einsum("ikm,kjm->ijm", F1, F1))

    return ReductionFields(F1=F1, F2=F2, F3=F3, F4=F4, grid=grid)


# ---------------------------------------------------------------------------
# boundary data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryData:
    """Trace data the characteristic sweeps start from.

    K_diag[i, a]   = K_ii(x_a, x_a), the quadrature of
                     -(1/sqrt(eps_i)) int_0^x (lam_ii + c_i)/(2 sqrt(eps_i));
                     off-diagonal K vanishes on the diagonal.
    L_diag[i,j,a]  = -(lam_ij(x_a) + delta_ij c_i)/(sqrt(eps_i)+sqrt(eps_j)).
    l_right[i,j,a] = free data l_ij(xi_a) on the x=1 edge for i > j
                     (defaults to 0; overrides must vanish at xi = 1).
    """

    K_diag: np.ndarray
    L_diag: np.ndarray
    l_right: np.ndarray
    l_coeffs: np.ndarray
    c: np.ndarray
    grid: Grid


def assemble_boundary_data(validated: ValidatedProblem, C, grid: Grid,
                           l_overrides: Optional[dict] = None) -> BoundaryData:
    """Build the diagonal traces and edge data for the kernel solve.

    The diagonal integral uses cumulative two-point Gauss-Legendre per cell
    (composite error O(h^4)).  Free data l_ij for i > j defaults to zero,
    which satisfies the corner compatibility l_ij(1) = K_ij(1,1) = 0;
    polynomial overrides are accepted if they vanish at xi = 1.
    """
    spec = validated.spec
    n = spec.n
    m = grid.m
    h = grid.h
    x = grid.x
    c = np.asarray(C, dtype=float).reshape(n)

    # cumulative GL2 quadrature of (lam_ii + c_i) / (2 sqrt(eps_i))
    gauss_offset = h / (2.0 * np.sqrt(3.0))
    mid = x[:-1] + h / 2.0
    p1 = mid - gauss_offset
    p2 = mid + gauss_offset
    K_diag = np.zeros((n, m + 1))
    for i in range(n):
        lam_ii = poly(spec.lam[i][i])
        eps_i = poly(spec.sigma[i])
        f = lambda t: (lam_ii(t) + c[i]) / (2.0 * np.sqrt(eps_i(t)))
        cell = (h / 2.0) * (f(p1) + f(p2))
        integral = np.concatenate(([0.0], np.cumsum(cell)))
        K_diag[i] = -integral / np.sqrt(eps_i(x))

    seps = np.sqrt(spec.eval_sigma(x))
    lam = spec.eval_lambda(x)
    L_diag = np.empty((n, n, m + 1))
    for i in range(n):
        for j in range(n):
            num = lam[:, i, j] + (c[i] if i == j else 0.0)
            L_diag[i, j] = -num / (seps[:, i] + seps[:, j])

    # free-data polynomials on the x=1 edge
    max_len = 1
    cooked = {}
    if l_overrides:
        for key, coeffs in l_overrides.items():
            i, j = key
            if not i > j:
                raise ValueError(f"free data only applies to entries with i > j, got {key}")
            cs = as_coeffs(coeffs)
            if abs(sum(cs)) > 1e-12:
                raise ValueError(f"free data l_{i + 1}{j + 1} must vanish at xi = 1")
            cooked[(i, j)] = cs
            max_len = max(max_len, len(cs))
    l_coeffs = np.zeros((n, n, max_len))
    for (i, j), cs in cooked.items():
        l_coeffs[i, j, : len(cs)] = cs
    l_right = np.zeros((n, n, m + 1))
    for (i, j), cs in cooked.items():
        l_right[i, j] = poly(cs)(x)

    return BoundaryData(K_diag=K_diag, L_diag=L_diag, l_right=l_right,
                        l_coeffs=l_coeffs, c=c, grid=grid)


# ---------------------------------------------------------------------------
# solved field
# ---------------------------------------------------------------------------

@dataclass
class KernelField:
    """Discrete (K, L) on the triangular grid; shape (n, n, M, M) each,
    entries with xi > x are unused and zero."""

    K: np.ndarray
    L: np.ndarray
    grid: Grid
    scheme: str = SCHEME_ID
    tol: float = 0.0
    iterations: int = 0
    update_residual: float = 0.0
    substeps: int = 1
    backend: str = ""
    solve_seconds: float = 0.0

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[2] - 1

    def gain_row(self) -> np.ndarray:
        """K(1, xi_b) blocks used by the feedback law; shape (M, n, n)."""
        return np.ascontiguousarray(self.K[:, :, self.m, :].transpose(2, 0, 1))


class _PathTable:
    __slots__ = ("fam", "i", "j", "node_a", "node_b", "foot_val", "ptr",
                 "pts_x", "pts_xi")

    def __init__(self, fam, i, j, node_a, node_b, foot_val, ptr, pts_x, pts_xi):
        self.fam = fam
        self.i = i
        self.j = j
        self.node_a = node_a
        self.node_b = node_b
        self.foot_val = foot_val
        self.ptr = ptr
        self.pts_x = pts_x
        self.pts_xi = pts_xi


def _substep_count(validated: ValidatedProblem) -> int:
    # enough x sub-steps per cell that no characteristic jumps a row
    from .problem import poly_extrema_on_unit_interval

    lo = np.inf
    hi = 0.0
    for i in range(validated.n):
        a, b = poly_extrema_on_unit_interval(validated.spec.eps(i))
        lo = min(lo, a)
        hi = max(hi, b)
    return max(int(np.ceil(np.sqrt(hi / lo))), 1)


def _build_path_tables(validated, boundary, grid, q):
    spec = validated.spec
    n = spec.n
    m = grid.m
    eps_c, _, lam_c = spec.packed_coeffs()
    tables = []
    cap = 2 * m * q + 16
    wx = np.empty(cap)
    wxi = np.empty(cap)
    empty_i4 = np.empty(0, dtype=np.int32)
    empty_f8 = np.empty(0)
    empty_i8 = np.empty(1, dtype=np.int64)
    for fam in range(2):
        for i in range(n):
            for j in range(n):
                n_nodes, n_pts = _kernels._build_plane(
                    fam, i, j, m, q, eps_c, lam_c, boundary.c,
                    boundary.l_coeffs, empty_i4, empty_i4, empty_f8,
                    empty_i8, empty_f8, empty_f8, wx, wxi, True)
                if n_nodes < 0:
                    raise GridTooCoarse(q, SUBSTEP_CAP)
                node_a = np.empty(n_nodes, dtype=np.int32)
                node_b = np.empty(n_nodes, dtype=np.int32)
                foot_val = np.empty(n_nodes)
                ptr = np.empty(n_nodes + 1, dtype=np.int64)
                pts_x = np.empty(n_pts)
                pts_xi = np.empty(n_pts)
                _kernels._build_plane(
                    fam, i, j, m, q, eps_c, lam_c, boundary.c,
                    boundary.l_coeffs, node_a, node_b, foot_val, ptr,
                    pts_x, pts_xi, wx, wxi, False)
                ptr[n_nodes] = n_pts
                tables.append(_PathTable(fam, i, j, node_a, node_b,
                                         foot_val, ptr, pts_x, pts_xi))
    return tables


def _templates(boundary: BoundaryData, n: int, m: int):
    K0 = np.zeros((n, n, m + 1, m + 1))
    L0 = np.zeros((n, n, m + 1, m + 1))
    diag = np.arange(m + 1)
    for i in range(n):
        K0[i, i, diag, diag] = boundary.K_diag[i]
        for j in range(n):
            L0[i, j, diag, diag] = boundary.L_diag[i, j]
            if i > j:
                K0[i, j, m, :] = boundary.l_right[i, j]
    return K0, L0


def solve_kernel(validated: ValidatedProblem, C, grid: Grid, tol: float = 1e-8,
                 *, max_iter: int = 10_000,
                 l_overrides: Optional[dict] = None) -> KernelField:
    """Solve the coupled first-order (K, L) system on the triangle.

    Successive approximation: each iterate integrates every scalar equation
    along its characteristic from the trace data (diagonal, xi=0 edge, and
    x=1 edge for the sub-diagonal K entries) with trapezoidal quadrature of
    the coupling terms, until the max-norm update, relative to the field
    magnitude (floored at 1), drops below ``tol``.  Boundary data holds
    exactly at boundary nodes.  Deterministic: fixed sweep order, no
    parallel reductions.

    Raises
    ------
    NoConvergence
        if the fixed-point iteration stalls before ``max_iter``.
    GridTooCoarse
        if resolving the characteristic slopes would need more than
        SUBSTEP_CAP sub-steps per cell.
    """
    t_start = time.perf_counter()
    spec = validated.spec
    n = spec.n
    m = grid.m

    q = _substep_count(validated)
    if q > SUBSTEP_CAP:
        raise GridTooCoarse(q, SUBSTEP_CAP)

    c = np.asarray(C, dtype=float).reshape(n)
    boundary = assemble_boundary_data(validated, c, grid, l_overrides)
    reduction = compute_reduction(validated, c, grid)
    eps_c, _, _ = spec.packed_coeffs()

    tables = _build_path_tables(validated, boundary, grid, q)
    K_tmpl, L_tmpl = _templates(boundary, n, m)

    K_old, L_old = K_tmpl.copy(), L_tmpl.copy()
    K_new, L_new = K_tmpl.copy(), L_tmpl.copy()

    F1g, F2g, F3g, F4g = reduction.F1, reduction.F2, reduction.F3, reduction.F4

    iterations = 0
    rel_update = np.inf
    for it in range(1, max_iter + 1):
        for tab in tables:
            out = K_new[tab.i, tab.j] if tab.fam == 0 else L_new[tab.i, tab.j]
            _kernels._sweep_plane(
                tab.fam, tab.i, tab.j, n, m,
                tab.node_a, tab.node_b, tab.foot_val, tab.ptr,
                tab.pts_x, tab.pts_xi,
                K_old, L_old, F1g, F2g, F3g, F4g, eps_c, out)
        update = max(np.max(np.abs(K_new - K_old)), np.max(np.abs(L_new - L_old)))
        denom = max(1.0, np.max(np.abs(K_new)), np.max(np.abs(L_new)))
        rel_update = update / denom
        K_old, K_new = K_new, K_old
        L_old, L_new = L_new, L_old
        iterations = it
        if rel_update <= tol:
            break
    else:
        raise NoConvergence(iterations, rel_update)

    return KernelField(K=K_old, L=L_old, grid=grid, scheme=SCHEME_ID, tol=tol,
                       iterations=iterations, update_residual=rel_update,
                       substeps=q, backend=backend(),
                       solve_seconds=time.perf_counter() - t_start)


def warmup() -> None:
    """Compile/load the jitted sweeps on a tiny problem (timing harnesses)."""
    from .problem import ProblemSpec, validate_problem

    spec = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.0]]], lam=[[[1.0]]])
    grid = Grid(m=8, dt=1e-3)
    solve_kernel(validate_problem(spec, grid), [1.0], grid, tol=1e-6)


def corner_compatible_free_data(validated: ValidatedProblem, C,
                                order: int = 2) -> dict:
    """Free data l_ij for i > j matched to the diagonal data at the corner
    (1, 1), so the kernel is differentiable (order=1) or twice differentiable
    (order=2) across the characteristic through that corner.

    The default l_ij = 0 only matches the corner *value*; the exact kernel
    then has a derivative jump along the characteristic emanating from
    (1, 1), which is mathematically fine (the kernel system is only
    guaranteed piecewise differentiable) but stalls finite-difference
    residual refinement studies.  This helper returns polynomial
    coefficients l_ij(xi) = D (1 - xi) + E (1 - xi)^2 with D and E computed
    from the trace data and the reduction fields at the corner.

    Only supports plants whose advection row i and column j vanish
    identically for each sub-diagonal entry (i, j) (otherwise the corner
    expansion couples the gradients of other kernel entries and no closed
    form is attempted).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    spec = validated.spec
    n = spec.n
    c = np.asarray(C, dtype=float).reshape(n)

    for i in range(n):
        for j in range(n):
            if i > j:
                for k in range(n):
                    if k != i and any(v != 0.0 for v in spec.phi[i][k]):
                        raise ValueError(
                            "corner-compatible free data needs phi row i of "
                            f"entry ({i + 1},{j + 1}) to vanish")
                    if k != j and any(v != 0.0 for v in spec.phi[k][j]):
                        raise ValueError(
                            "corner-compatible free data needs phi column j of "
                            f"entry ({i + 1},{j + 1}) to vanish")

    one = np.array([1.0])
    eps1 = spec.eval_sigma(one)[0]
    deps1 = spec.eval_sigma_prime(one)[0]
    lam1 = spec.eval_lambda(one)[0]
    alpha = np.sqrt(eps1)                  # sqrt(eps) at x = 1 per state
    dalpha = deps1 / (2.0 * alpha)

    # diagonal trace values at the corner (needed by the L-equation RHS)
    tiny_grid = Grid(m=8, dt=1.0)
    bd_grid = Grid(m=2048, dt=1.0)
    bd = assemble_boundary_data(validated, c, bd_grid)
    K_corner = np.diag(bd.K_diag[:, -1])
    L_corner = bd.L_diag[:, :, -1]

    red1 = compute_reduction(validated, c, tiny_grid)
    F1_1 = red1.F1[:, :, -1]
    F2_1 = red1.F2[:, :, -1]
    F3_1 = red1.F3[:, :, -1]
    F4_1 = red1.F4[:, :, -1]

    out = {}
    for i in range(n):
        for j in range(i):
            a1 = alpha[i]      # sqrt(eps_i)(1)
            b1 = alpha[j]      # sqrt(eps_j)(1)
            db1 = dalpha[j]
            da1 = dalpha[i]
            ltr = L_corner[i, j]
            D = ltr / (a1 - b1)
            if order == 1:
                out[(i, j)] = (D, -D)
                continue
            # d/dx of the trace -lam(x) / (a(x)+b(x)) at x = 1
            lam_p = poly(spec.lam[i][j]).deriv()(1.0)
            S_dL = (-lam_p * (a1 + b1) + lam1[i, j] * (da1 + db1)) / (a1 + b1) ** 2
            # transversal derivative of L_ij from its own equation
            rhs_L = (K_corner.dot(F3_1) + F4_1.dot(K_corner)
                     - F1_1.dot(L_corner) + L_corner.dot(F2_1))[i, j]
            L_xi = (a1 * S_dL - rhs_L) / (a1 + b1)
            w11 = F1_1[i, i] + F2_1[j, j]
            S_e = L_xi + w11 * D
            T_d = S_dL + (db1 - da1) * D
            E = ((b1 - a1) * (S_e + db1 * D) - a1 * T_d) / (2.0 * (b1 - a1) ** 2)
            # l(xi) = D(1-xi) + E(1-xi)^2, ascending coefficients
            out[(i, j)] = (D + E, -D - 2.0 * E, E)
    return out


# ---------------------------------------------------------------------------
# residual verification
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    """Max-norm residuals per kernel entry.

    pde2   second-order kernel system at interior triangle nodes
           (centered differences);
    fo_K / fo_L   the first-order reduced system at interior nodes;
    bc1    the scalar diagonal compatibility condition (one-sided stencils);
    bc2    |K_ij(x,x)| for i != j;
    bc3    |K_ij(x,0)| for i <= j.
    """

    pde2: np.ndarray
    fo_K: np.ndarray
    fo_L: np.ndarray
    bc1: np.ndarray
    bc2: np.ndarray
    bc3: np.ndarray
    update_residual: float
    iterations: int

    def overall(self) -> dict:
        return {
            "pde2": float(self.pde2.max()),
            "fo_K": float(self.fo_K.max()),
            "fo_L": float(self.fo_L.max()),
            "bc1": float(self.bc1.max()),
            "bc2": float(self.bc2.max()),
            "bc3": float(self.bc3.max()),
        }

    def rows(self):
        n = self.pde2.shape[0]
        for name in ("pde2", "fo_K", "fo_L", "bc1", "bc2", "bc3"):
            arr = getattr(self, name)
            for i in range(n):
                for j in range(n):
                    yield name, i + 1, j + 1, arr[i, j]


def kernel_residual(fld: KernelField, validated: ValidatedProblem, C) -> ResidualReport:
    """Finite-difference residuals of a solved (or handcrafted) field.

    The second-order system is checked in the expanded form
    eps_i Kxx + eps_i' Kx - eps_j Kxixi - eps_j' Kxi + (Phi(x) Kx)_ij
    + (Kxi Phi(xi))_ij - (K Lambda + C K - K Phi')_ij at interior nodes,
    the sign of the K Phi' term following the derivation that the
    first-order reduction is consistent with.  The diagonal compatibility
    condition is checked in its scalar per-entry form with one-sided
    second-order stencils.
    """
    spec = validated.spec
    n = spec.n
    m = fld.m
    h = fld.grid.h
    x = fld.grid.x
    K, L = fld.K, fld.L
    c = np.asarray(C, dtype=float).reshape(n)

    # interior index set: centered stencils stay inside the triangle
    A, B = np.meshgrid(np.arange(1, m), np.arange(1, m), indexing="ij")
    keep = B <= A - 1
    A, B = A[keep], B[keep]

    eps = spec.eval_sigma(x)          # (M, n)
    deps = spec.eval_sigma_prime(x)
    phi = spec.eval_phi(x)            # (M, n, n)
    dphi = spec.eval_phi_prime(x)
    lam = spec.eval_lambda(x)

    KX = (K[:, :, A + 1, B] - K[:, :, A - 1, B]) / (2 * h)
    KXX = (K[:, :, A + 1, B] - 2 * K[:, :, A, B] + K[:, :, A - 1, B]) / h**2
    KXI = (K[:, :, A, B + 1] - K[:, :, A, B - 1]) / (2 * h)
    KXIXI = (K[:, :, A, B + 1] - 2 * K[:, :, A, B] + K[:, :, A, B - 1]) / h**2
    Kc = K[:, :, A, B]

    eps_x = eps[A].transpose(1, 0)        # (n, P) at x_a per state
    deps_x = deps[A].transpose(1, 0)
    eps_xi = eps[B].transpose(1, 0)
    deps_xi = deps[B].transpose(1, 0)

    lhs = (eps_x[:, None, :] * KXX + deps_x[:, None, :] * KX
           - eps_xi[None, :, :] * KXIXI - deps_xi[None, :, :] * KXI
           + np.einsum("pik,kjp->ijp", phi[A], KX)
           + np.einsum("ikp,pkj->ijp", KXI, phi[B]))
    rhs = (np.einsum("ikp,pkj->ijp", Kc, lam[B])
           + c[:, None, None] * Kc
           - np.einsum("ikp,pkj->ijp", Kc, dphi[B]))
    pde2 = np.max(np.abs(lhs - rhs), axis=2) if A.size else np.zeros((n, n))

    # first-order system at the same interior nodes
    red = compute_reduction(validated, c, fld.grid)
    LX = (L[:, :, A + 1, B] - L[:, :, A - 1, B]) / (2 * h)
    LXI = (L[:, :, A, B + 1] - L[:, :, A, B - 1]) / (2 * h)
    Lc = L[:, :, A, B]
    se_x = np.sqrt(eps_x)
    se_xi = np.sqrt(eps_xi)
    F1a = red.F1[:, :, A]   # (n, n, P) sampled at x_a
    F2b = red.F2[:, :, B]
    F3b = red.F3[:, :, B]
    F4a = red.F4[:, :, A]
    rK = (se_x[:, None, :] * KX + KXI * se_xi[None, :, :]
          - (Lc - np.einsum("ikp,kjp->ijp", F1a, Kc)
             - np.einsum("ikp,kjp->ijp", Kc, F2b)))
    rL = (se_x[:, None, :] * LX - LXI * se_xi[None, :, :]
          - (np.einsum("ikp,kjp->ijp", Kc, F3b)
             + np.einsum("ikp,kjp->ijp", F4a, Kc)
             - np.einsum("ikp,kjp->ijp", F1a, Lc)
             + np.einsum("ikp,kjp->ijp", Lc, F2b)))
    fo_K = np.max(np.abs(rK), axis=2) if A.size else np.zeros((n, n))
    fo_L = np.max(np.abs(rL), axis=2) if A.size else np.zeros((n, n))

    # diagonal compatibility, scalar form, at diag nodes 2 <= a <= m-2
    d = np.arange(2, m - 1)
    Kx_f = (-3 * K[:, :, d, d] + 4 * K[:, :, d + 1, d] - K[:, :, d + 2, d]) / (2 * h)
    Kxi_b = (3 * K[:, :, d, d] - 4 * K[:, :, d, d - 1] + K[:, :, d, d - 2]) / (2 * h)
    eps_d = eps[d]            # (P, n)
    trace = K[:, :, d, d]
    # d/dx of eps_i(x) K_ij(x,x) along the diagonal, centered
    eKdiag_p = eps[d + 1].T[:, None, :] * K[:, :, d + 1, d + 1]
    eKdiag_m = eps[d - 1].T[:, None, :] * K[:, :, d - 1, d - 1]
    ddiag = (eKdiag_p - eKdiag_m) / (2 * h)
    diag_idx = np.arange(n)
    Kjj = trace[diag_idx, diag_idx]      # (n, P)
    bc1_res = (np.einsum("pij,jp->ijp", phi[d], Kjj)
               - np.einsum("pij,ip->ijp", phi[d], Kjj)
               + lam[d].transpose(1, 2, 0)
               + np.diag(c)[:, :, None]
               + Kxi_b * eps_d.T[None, :, :]
               + eps_d.T[:, None, :] * Kx_f
               + ddiag)
    bc1 = np.max(np.abs(bc1_res), axis=2) if d.size else np.zeros((n, n))

    diag = np.arange(m + 1)
    bc2 = np.max(np.abs(K[:, :, diag, diag]), axis=2)
    bc2[diag_idx, diag_idx] = 0.0
    bc3 = np.max(np.abs(K[:, :, :, 0]), axis=2)
    bc3[np.tril_indices(n, -1)] = 0.0

    return ResidualReport(pde2=pde2, fo_K=fo_K, fo_L=fo_L, bc1=bc1, bc2=bc2,
                          bc3=bc3, update_residual=fld.update_residual,
                          iterations=fld.iterations)


# ---------------------------------------------------------------------------
# trace-coupling matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GMatrix:
    """Strictly lower triangular coupling gain g_ij(x) = -K_ij(x,0) eps_j(0),
    sampled on the x grid; shape (M, n, n)."""

    values: np.ndarray
    grid: Grid

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def sup_entry(self) -> float:
        return float(np.abs(self.values).max())


def extract_G(fld: KernelField, validated: ValidatedProblem,
              tol: float = 1e-8) -> GMatrix:
    """Read G off the solved kernel's xi = 0 edge.

    Entries with i <= j must vanish there (they are imposed data, so any
    excess signals a corrupted field) and are stored as exact zeros.
    """
    spec = validated.spec
    n = spec.n
    m = fld.m
    eps0 = spec.eval_sigma(np.array([0.0]))[0]
    values = np.zeros((m + 1, n, n))
    for i in range(n):
        for j in range(n):
            edge = fld.K[i, j, :, 0]
            if i <= j:
                worst = float(np.abs(edge).max())
                if worst > tol:
                    raise StructureViolation(i, j, worst)
            else:
                values[:, i, j] = -edge * eps0[j]
    return GMatrix(values=values, grid=fld.grid)
