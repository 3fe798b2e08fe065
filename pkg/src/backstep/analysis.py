"""Stability certificate: coefficient-bound constants, the design threshold
cstar, the inductive diagonal Q construction with its positive-definiteness
check, Lyapunov functional evaluation, and decay-rate fitting.

Conventions: q_1 = 1 (the first weight is free); when a bound p, g, or
eps_prime_hi is zero, the corresponding Young-inequality split is skipped
(the dropped term vanishes identically) and the alpha is recorded as unused
(None).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingBound, NonPositiveR, NonPositiveSeries
from .problem import CoefficientBounds
from .transform import StateField

JACOBI_TOL = 1e-12


@dataclass
class Constants:
    """Estimate constants derived from the coefficient bounds.

    k7 depends on the Q spectrum and the design diagonal, so it stays None
    until the certificate assembly fixes both (evaluation order is recorded
    by the certificate).
    """

    k5: float
    k6: float
    k8: float
    k7: Optional[float]
    alphas: tuple[Optional[float], Optional[float], Optional[float]]
    bounds: CoefficientBounds


def compute_constants(bounds: CoefficientBounds) -> Constants:
    """K5 = 2p+1, K6 = 2p + eps_lo/4 + 3(eps'^2 + p^2)/eps_lo - 2 eps_lo,
    K8 = (g^2/2)(1/(3 eps_lo) + 1), and the Young split weights
    alpha2 = eps_lo/(3 eps'), alpha3 = eps_lo/(3p), alpha4 = eps_lo/(3g).
    """
    if bounds.g is None:
        raise MissingBound("coupling bound g is unset; extract G first")
    p = bounds.p
    e_lo = bounds.eps_lo
    ep = bounds.eps_prime_hi
    g = bounds.g
    alpha2 = e_lo / (3.0 * ep) if ep > 0 else None
    alpha3 = e_lo / (3.0 * p) if p > 0 else None
    alpha4 = e_lo / (3.0 * g) if g > 0 else None
    k5 = 2.0 * p + 1.0
    k6 = (2.0 * p + e_lo / 4.0 + (3.0 / e_lo) * (ep**2 + p**2)) - 2.0 * e_lo
    k8 = (g**2 / 2.0) * (1.0 / (3.0 * e_lo) + 1.0)
    return Constants(k5=k5, k6=k6, k8=k8, k7=None,
                     alphas=(alpha2, alpha3, alpha4), bounds=bounds)


def compute_cstar(constants: Constants) -> float:
    """Design threshold cstar = max(K5, K6 + eps_lo/4) / 2; the closed loop
    certificate needs every c_i >= cstar + delta for some margin delta > 0."""
    return 0.5 * max(constants.k5, constants.k6 + constants.bounds.eps_lo / 4.0)


def finalize_k7(constants: Constants, Q: np.ndarray, C) -> float:
    """K7 = (qbar^2 / (2 eps_lo qlow)) ((1 + cbar) + eps_hi)^2; needs the Q
    spectrum and the design diagonal, hence evaluated last."""
    q = np.asarray(Q, dtype=float)
    cbar = float(np.max(np.asarray(C, dtype=float)))
    qbar, qlow = float(q.max()), float(q.min())
    b = constants.bounds
    k7 = (qbar**2 / (2.0 * b.eps_lo * qlow)) * ((1.0 + cbar) + b.eps_hi) ** 2
    constants.k7 = k7
    return k7


def lql(Q) -> np.ndarray:
    """Closed form of L^T Q L for the all-ones strictly lower triangular L:
    entry (i, j) is the sum of q_l for l > max(i, j) (empty sum = 0)."""
    q = np.asarray(Q, dtype=float)
    n = q.shape[0]
    suffix = np.concatenate((np.cumsum(q[::-1])[::-1], [0.0]))  # sum q[k:]
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = suffix[max(i, j) + 1]
    return out


def jacobi_eigenvalues(A: np.ndarray, tol: float = JACOBI_TOL,
                       max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps rotate every off-diagonal pair until the off-diagonal Frobenius
    norm drops below ``tol``.  Deterministic: fixed (p, q) sweep order, no
    pivot search.  Sized for the small matrices of the Q construction.
    """
    a = np.array(A, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a.ravel().copy()
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-36 * abs(diff):
                    t = apq / diff
                elif diff == 0.0:
                    t = 1.0
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1.0))
                cth = 1.0 / np.sqrt(t**2 + 1.0)
                sth = t * cth
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = cth
                rot[p, q] = sth
                rot[q, p] = -sth
                a = rot.T.dot(a).dot(rot)
    return np.diagonal(a).copy()


#: Cap on the Q weights: any positive value up to the inductive choice keeps
#: R positive definite (it shrinks both the coupling perturbation and the new
#: diagonal block), and the cap avoids overflow for vanishingly small K8.
Q_WEIGHT_CAP = 1e8


def build_Q(n: int, K8: float, eps_lo: float) -> tuple[np.ndarray, float]:
    """Diagonal Q making R(Q) = (eps_lo/4) Q - K8 L^T Q L positive definite.

    Induction on the dimension: q_1 = 1; given the leading (k-1)-block, take
    mu = min eig R(Q_{k-1}) and set q_k = mu / (2 K8 (k-1)), capped at
    Q_WEIGHT_CAP.  With K8 = 0 the coupling term is absent and q_k = 1.
    Returns (Q, min eig R(Q_n)).

    Raises NonPositiveR if the final check fails (unreachable if the
    construction is sound; kept as an internal consistency guard).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if K8 < 0 or eps_lo <= 0:
        raise ValueError("need K8 >= 0 and eps_lo > 0")
    q = np.ones(n)
    for k in range(2, n + 1):
        if K8 == 0.0:
            q[k - 1] = 1.0
            continue
        r_prev = (eps_lo / 4.0) * np.diag(q[: k - 1]) - K8 * lql(q[: k - 1])
        mu = float(jacobi_eigenvalues(r_prev).min())
        q[k - 1] = min(mu / (2.0 * K8 * (k - 1)), Q_WEIGHT_CAP)
    r = (eps_lo / 4.0) * np.diag(q) - K8 * lql(q)
    min_eig = float(jacobi_eigenvalues(r).min())
    if min_eig <= 0.0:
        raise NonPositiveR(q, min_eig)
    return q, min_eig


@dataclass
class LyapunovValues:
    """Weighted squared seminorms of the target state: V1 = (1/2) int w^T Q w,
    V2 the same with w_x, V3 with w_xx.  V3 uses one-sided second-derivative
    stencils near the boundary and is only as accurate as those allow."""

    v1: float
    v2: float
    v3: float


def _second_derivative(values: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / h**2
    out[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h**2
    out[-1] = (2.0 * values[-1] - 5.0 * values[-2] + 4.0 * values[-3] - values[-4]) / h**2
    return out


def lyapunov_values(w: StateField, Q) -> LyapunovValues:
    q = np.asarray(Q, dtype=float).ravel()
    h = w.grid.h
    v = w.values
    dv = np.gradient(v, h, axis=0, edge_order=2)
    ddv = _second_derivative(v, h)
    v1 = 0.5 * float(np.trapezoid((v**2 * q).sum(axis=1), dx=h))
    v2 = 0.5 * float(np.trapezoid((dv**2 * q).sum(axis=1), dx=h))
    v3 = 0.5 * float(np.trapezoid((ddv**2 * q).sum(axis=1), dx=h))
    return LyapunovValues(v1=v1, v2=v2, v3=v3)


@dataclass
class DecayFit:
    rate: float
    residual: float


def fit_decay_rate(series: np.ndarray, window: tuple[float, float]) -> DecayFit:
    """Least-squares slope of log(value) against t on the window, negated.

    ``series`` holds rows (t, value).  Requires at least 10 samples in the
    window; values must be positive there (NonPositiveSeries otherwise).
    The returned residual is the RMS misfit of the log-linear model.
    """
    series = np.asarray(series, dtype=float)
    t0, t1 = window
    mask = (series[:, 0] >= t0) & (series[:, 0] <= t1)
    t = series[mask, 0]
    v = series[mask, 1]
    if t.shape[0] < 10:
        raise ValueError(f"need >= 10 samples in window, got {t.shape[0]}")
    if np.any(v <= 0.0):
        raise NonPositiveSeries("series must be positive on the fit window")
    logv = np.log(v)
    slope, intercept = np.polyfit(t, logv, 1)
    fit = slope * t + intercept
    rms = float(np.sqrt(np.mean((logv - fit) ** 2)))
    return DecayFit(rate=-float(slope), residual=rms)


@dataclass
class StabilityCertificate:
    """Everything the sufficient stability condition needs, in evaluation
    order: bounds -> (K5, K6, K8, alphas) -> cstar -> Q -> K7 -> margin."""

    bounds: CoefficientBounds
    k5: float
    k6: float
    k7: float
    k8: float
    cstar: float
    q: np.ndarray
    min_eig_r: float
    alphas: tuple
    c: np.ndarray
    delta: float

    @property
    def satisfied(self) -> bool:
        return self.delta > 0 and self.min_eig_r > 0

    def rows(self):
        yield "p", self.bounds.p
        yield "eps_lo", self.bounds.eps_lo
        yield "eps_hi", self.bounds.eps_hi
        yield "eps_prime_hi", self.bounds.eps_prime_hi
        yield "g", self.bounds.g
        yield "K5", self.k5
        yield "K6", self.k6
        yield "K7", self.k7
        yield "K8", self.k8
        yield "cstar", self.cstar
        for i, qi in enumerate(self.q):
            yield f"q{i + 1}", qi
        yield "min_eig_R", self.min_eig_r
        yield "delta", self.delta


def build_certificate(bounds: CoefficientBounds, C, n: int) -> StabilityCertificate:
    """Assemble the full certificate for design diagonal C (see class doc
    for the evaluation order)."""
    c = np.asarray(C, dtype=float).reshape(n)
    constants = compute_constants(bounds)
    cstar = compute_cstar(constants)
    q, min_eig = build_Q(n, constants.k8, bounds.eps_lo)
    k7 = finalize_k7(constants, q, c)
    delta = float(c.min()) - cstar
    return StabilityCertificate(bounds=bounds, k5=constants.k5, k6=constants.k6,
                                k7=k7, k8=constants.k8, cstar=cstar, q=q,
                                min_eig_r=min_eig, alphas=constants.alphas,
                                c=c, delta=delta)


def fill_g_bound(bounds: CoefficientBounds, G) -> CoefficientBounds:
    """Return bounds with g = (1 + 1%) sup |g_ij(x)| from an extracted G."""
    from .problem import BOUND_INFLATION

    return CoefficientBounds(p=bounds.p, eps_lo=bounds.eps_lo,
                             eps_hi=bounds.eps_hi,
                             eps_prime_hi=bounds.eps_prime_hi,
                             g=G.sup_entry() * BOUND_INFLATION)
