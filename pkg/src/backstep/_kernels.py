"""Compiled inner loops of the coupled-kernel characteristic solver.

Everything here operates on plain float64/int arrays so the functions can be
jitted by numba (see ``_accel``).  Layouts:

* kernel fields ``K``, ``L``: shape (n, n, M, M), node (a, b) = (x_a, xi_b),
  entries above the diagonal (b > a) are unused and stay zero;
* reduction fields ``F1g`` .. ``F4g``: shape (n, n, M), sampled at grid nodes
  (F1/F4 as functions of x, F2/F3 of xi), linearly interpolated in between;
* polynomial coefficients: ascending, zero padded to a common length.

Entry (i, j) of the K equation propagates along dxi/dx = +sqrt(eps_j(xi)) /
sqrt(eps_i(x)); the L equation along the mirrored slope.  Paths are traced
once per plane (RK4 with ``q`` sub-steps per cell, bisection on boundary
crossings) and reused by every Picard sweep.
"""

import numpy as np

from ._accel import njit

# path termination flags
FOOT_BOTTOM = 0  # xi = 0 edge
FOOT_DIAG = 1    # xi = x diagonal
FOOT_RIGHT = 2   # x = 1 edge


@njit
def _horner(c, x):
    r = c[len(c) - 1]
    for k in range(len(c) - 2, -1, -1):
        r = r * x + c[k]
    return r


@njit
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit
def _slope(eps_c, i, j, x, xi):
    # dxi/dx magnitude for entry (i, j); polynomial args clamped to [0, 1]
    return np.sqrt(_horner(eps_c[j], _clamp01(xi))) / np.sqrt(
        _horner(eps_c[i], _clamp01(x))
    )


@njit
def _rk4_xi(eps_c, i, j, dir_xi, x0, xi0, dx):
    k1 = dir_xi * _slope(eps_c, i, j, x0, xi0)
    k2 = dir_xi * _slope(eps_c, i, j, x0 + 0.5 * dx, xi0 + 0.5 * dx * k1)
    k3 = dir_xi * _slope(eps_c, i, j, x0 + 0.5 * dx, xi0 + 0.5 * dx * k2)
    k4 = dir_xi * _slope(eps_c, i, j, x0 + dx, xi0 + dx * k3)
    return xi0 + dx / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit
def _cross_tau(eps_c, i, j, dir_xi, x0, xi0, dx, mode):
    """Bisect the step fraction where the path crosses a boundary.

    mode 0: xi = 0 (inside has xi > 0); mode 1: xi = x (inside has xi < x).
    """
    lo = 0.0
    hi = 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        xim = _rk4_xi(eps_c, i, j, dir_xi, x0, xi0, mid * dx)
        if mode == 0:
            g = xim
            inside = g > 0.0
        else:
            g = xim - (x0 + mid * dx)
            inside = g < 0.0
        if inside:
            lo = mid
        else:
            hi = mid
    return hi


@njit
def _trace_node(fam, i, j, a, b, m, q, eps_c, wx, wxi):
    """Trace the characteristic of plane (fam, i, j) from node (a, b) to its
    data boundary.  Fills wx/wxi in node-to-foot order; returns (npts, flag).
    """
    mq = m * q
    x = a / m
    xi = b / m
    wx[0] = x
    wxi[0] = xi
    idx = 0

    if fam == 0:  # K equation, slope +s
        dir_xi = 1.0
        forward = i > j
    else:  # L equation, slope -s
        dir_xi = -1.0
        forward = False

    k = 0
    cap = 2 * mq + 8
    while True:
        k += 1
        if k > cap:
            return -1, -1
        if forward:
            x_next = (a * q + k) / mq
        else:
            x_next = (a * q - k) / mq
        dx = x_next - x
        xi_next = _rk4_xi(eps_c, i, j, dir_xi, x, xi, dx)

        if fam == 0 and i == j:
            # the diagonal is itself a characteristic; never crossed
            if xi_next > x_next:
                xi_next = x_next
            if xi_next <= 0.0:
                tau = _cross_tau(eps_c, i, j, dir_xi, x, xi, dx, 0)
                idx += 1
                wx[idx] = x + tau * dx
                wxi[idx] = 0.0
                return idx + 1, FOOT_BOTTOM
        elif fam == 0 and i < j:
            tau_edge = 2.0
            tau_diag = 2.0
            if xi_next <= 0.0:
                tau_edge = _cross_tau(eps_c, i, j, dir_xi, x, xi, dx, 0)
            if xi_next >= x_next:
                tau_diag = _cross_tau(eps_c, i, j, dir_xi, x, xi, dx, 1)
            if tau_edge <= 1.0 or tau_diag <= 1.0:
                idx += 1
                if tau_edge < tau_diag:
                    wx[idx] = x + tau_edge * dx
                    wxi[idx] = 0.0
                    return idx + 1, FOOT_BOTTOM
                xf = x + tau_diag * dx
                wx[idx] = xf
                wxi[idx] = xf
                return idx + 1, FOOT_DIAG
        elif fam == 0:  # i > j, forward toward diagonal or x = 1
            if xi_next >= x_next:
                tau = _cross_tau(eps_c, i, j, dir_xi, x, xi, dx, 1)
                xf = x + tau * dx
                idx += 1
                wx[idx] = xf
                wxi[idx] = xf
                return idx + 1, FOOT_DIAG
            if x_next >= 1.0:
                idx += 1
                wx[idx] = 1.0
                wxi[idx] = xi_next
                return idx + 1, FOOT_RIGHT
        else:  # L equation, backward toward the diagonal
            if xi_next >= x_next:
                tau = _cross_tau(eps_c, i, j, dir_xi, x, xi, dx, 1)
                xf = x + tau * dx
                idx += 1
                wx[idx] = xf
                wxi[idx] = xf
                return idx + 1, FOOT_DIAG
            if x_next <= 0.0:
                idx += 1
                wx[idx] = 0.0
                wxi[idx] = 0.0
                return idx + 1, FOOT_DIAG

        idx += 1
        wx[idx] = x_next
        wxi[idx] = xi_next
        x = x_next
        xi = xi_next


@njit
def _plane_imposed(fam, i, j, m):
    """Mask of nodes whose value is boundary data (1) vs path nodes (0)."""
    mask = np.zeros((m + 1, m + 1), dtype=np.uint8)
    for a in range(m + 1):
        for b in range(a + 1):
            if b == a:
                mask[a, b] = 1
            elif fam == 0 and i <= j and b == 0:
                mask[a, b] = 1
            elif fam == 0 and i > j and a == m:
                mask[a, b] = 1
    return mask


@njit
def _build_plane(fam, i, j, m, q, eps_c, lam_c, c_vec, l_c,
                 node_a, node_b, foot_val, ptr, pts_x, pts_xi, wx, wxi,
                 count_only):
    """Trace every path node of one plane.  With count_only, just size the
    flat point buffer; otherwise fill the path table (foot-first order).
    """
    n_nodes = 0
    n_pts = 0
    for a in range(m + 1):
        for b in range(a + 1):
            if b == a:
                continue
            if fam == 0 and i <= j and b == 0:
                continue
            if fam == 0 and i > j and a == m:
                continue
            npts, flag = _trace_node(fam, i, j, a, b, m, q, eps_c, wx, wxi)
            if npts < 0:
                return -1, -1
            if not count_only:
                node_a[n_nodes] = a
                node_b[n_nodes] = b
                ptr[n_nodes] = n_pts
                # reverse to foot-first order
                for k in range(npts):
                    pts_x[n_pts + k] = wx[npts - 1 - k]
                    pts_xi[n_pts + k] = wxi[npts - 1 - k]
                xf = wx[npts - 1]
                xif = wxi[npts - 1]
                if fam == 1:
                    # L trace on the diagonal
                    se_i = np.sqrt(_horner(eps_c[i], xf))
                    se_j = np.sqrt(_horner(eps_c[j], xf))
                    num = _horner(lam_c[i, j], xf)
                    if i == j:
                        num += c_vec[i]
                    foot_val[n_nodes] = -num / (se_i + se_j)
                elif flag == FOOT_RIGHT:
                    foot_val[n_nodes] = _horner(l_c[i, j], xif)
                else:
                    foot_val[n_nodes] = 0.0
            n_nodes += 1
            n_pts += npts
    return n_nodes, n_pts


@njit
def _interp1(g, x, m):
    """Cubic (4-point Lagrange) interpolation of a 1-D grid function."""
    t = x * m
    if t < 0.0:
        t = 0.0
    if t > m:
        t = float(m)
    if m < 3:
        a0 = int(t)
        if a0 >= m:
            a0 = m - 1
        f = t - a0
        return (1.0 - f) * g[a0] + f * g[a0 + 1]
    s0 = int(t) - 1
    if s0 < 0:
        s0 = 0
    if s0 > m - 3:
        s0 = m - 3
    u = t - s0
    w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0
    w1 = u * (u - 2.0) * (u - 3.0) / 2.0
    w2 = -u * (u - 1.0) * (u - 3.0) / 2.0
    w3 = u * (u - 1.0) * (u - 2.0) / 6.0
    return w0 * g[s0] + w1 * g[s0 + 1] + w2 * g[s0 + 2] + w3 * g[s0 + 3]


@njit
def _col_read(plane, acol, t, bmax):
    """Interpolate plane[acol, :] at fractional row t, using only the valid
    rows 0..bmax of that column (cubic where the column is long enough)."""
    if t < 0.0:
        t = 0.0
    if t > bmax:
        t = float(bmax)
    if bmax == 0:
        return plane[acol, 0]
    if bmax == 1:
        b0 = 0
        u = t
        return (1.0 - u) * plane[acol, 0] + u * plane[acol, 1]
    if bmax == 2:
        u = t
        w0 = (u - 1.0) * (u - 2.0) / 2.0
        w1 = -u * (u - 2.0)
        w2 = u * (u - 1.0) / 2.0
        return w0 * plane[acol, 0] + w1 * plane[acol, 1] + w2 * plane[acol, 2]
    s0 = int(t) - 1
    if s0 < 0:
        s0 = 0
    if s0 > bmax - 3:
        s0 = bmax - 3
    u = t - s0
    w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0
    w1 = u * (u - 2.0) * (u - 3.0) / 2.0
    w2 = -u * (u - 1.0) * (u - 3.0) / 2.0
    w3 = u * (u - 1.0) * (u - 2.0) / 6.0
    return (w0 * plane[acol, s0] + w1 * plane[acol, s0 + 1]
            + w2 * plane[acol, s0 + 2] + w3 * plane[acol, s0 + 3])


@njit
def _interp_tri(plane, x, xi, m):
    """Interpolate on the triangular grid: cubic along xi within the two
    bracketing columns, linear across them.  Cells cut by the diagonal fall
    back to barycentric interpolation on their lower triangle."""
    if x < 0.0:
        x = 0.0
    if x > 1.0:
        x = 1.0
    if xi < 0.0:
        xi = 0.0
    if xi > x:
        xi = x
    tx = x * m
    a0 = int(tx)
    if a0 >= m:
        a0 = m - 1
    fx = tx - a0
    txi = xi * m
    b0 = int(txi)
    if b0 >= m:
        b0 = m - 1
    if b0 >= a0:
        # diagonal cell: vertices (a0,a0), (a0+1,a0), (a0+1,a0+1)
        b0 = a0
        fxi = txi - b0
        if fxi > fx:
            fxi = fx
        return (plane[a0, a0] * (1.0 - fx)
                + plane[a0 + 1, b0] * (fx - fxi)
                + plane[a0 + 1, b0 + 1] * fxi)
    vl = _col_read(plane, a0, txi, a0)
    vr = _col_read(plane, a0 + 1, txi, a0 + 1)
    return (1.0 - fx) * vl + fx * vr


@njit
def _rhs_K(i, j, n, m, x, xi, K, L, F1g, F2g, eps_c):
    # (L - F1 K - K F2)_ij / sqrt(eps_i(x))
    acc = _interp_tri(L[i, j], x, xi, m)
    for k in range(n):
        acc -= _interp1(F1g[i, k], x, m) * _interp_tri(K[k, j], x, xi, m)
        acc -= _interp_tri(K[i, k], x, xi, m) * _interp1(F2g[k, j], xi, m)
    return acc / np.sqrt(_horner(eps_c[i], _clamp01(x)))


@njit
def _rhs_L(i, j, n, m, x, xi, K, L, F1g, F2g, F3g, F4g, eps_c):
    # (K F3 + F4 K - F1 L + L F2)_ij / sqrt(eps_i(x))
    acc = 0.0
    for k in range(n):
        acc += _interp_tri(K[i, k], x, xi, m) * _interp1(F3g[k, j], xi, m)
        acc += _interp1(F4g[i, k], x, m) * _interp_tri(K[k, j], x, xi, m)
        acc -= _interp1(F1g[i, k], x, m) * _interp_tri(L[k, j], x, xi, m)
        acc += _interp_tri(L[i, k], x, xi, m) * _interp1(F2g[k, j], xi, m)
    return acc / np.sqrt(_horner(eps_c[i], _clamp01(x)))


@njit
def _sweep_plane(fam, i, j, n, m, node_a, node_b, foot_val, ptr, pts_x, pts_xi,
                 K_old, L_old, F1g, F2g, F3g, F4g, eps_c, out):
    """One Picard update of a plane: integrate the coupling terms of the
    previous iterate along each node's characteristic (trapezoid)."""
    for p in range(node_a.shape[0]):
        s = ptr[p]
        e = ptr[p + 1]
        x0 = pts_x[s]
        xi0 = pts_xi[s]
        if fam == 0:
            f_prev = _rhs_K(i, j, n, m, x0, xi0, K_old, L_old, F1g, F2g, eps_c)
        else:
            f_prev = _rhs_L(i, j, n, m, x0, xi0, K_old, L_old,
                            F1g, F2g, F3g, F4g, eps_c)
        acc = foot_val[p]
        for k in range(s + 1, e):
            x1 = pts_x[k]
            xi1 = pts_xi[k]
            if fam == 0:
                f_cur = _rhs_K(i, j, n, m, x1, xi1, K_old, L_old, F1g, F2g, eps_c)
            else:
                f_cur = _rhs_L(i, j, n, m, x1, xi1, K_old, L_old,
                               F1g, F2g, F3g, F4g, eps_c)
            acc += 0.5 * (x1 - x0) * (f_prev + f_cur)
            x0 = x1
            f_prev = f_cur
        out[node_a[p], node_b[p]] = acc
