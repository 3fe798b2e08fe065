"""Plant definition: coefficient model, grids, and the bounds the
stability analysis consumes.

Coefficients are polynomials in x (ascending coefficient lists).  The
first-order reduction needs analytic derivatives of the diffusivities and
advection entries, so polynomials are kept symbolic instead of sampled.
All types here are immutable and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import NonPositiveDiffusivity, OrderingViolation

#: Hard cap on polynomial degree accepted for any coefficient entry.
MAX_POLY_DEGREE = 16

#: Multiplicative safety factor applied to sampled (non-polynomial) sup bounds.
BOUND_INFLATION = 1.01

Coeffs = tuple[float, ...]


def as_coeffs(entry) -> Coeffs:
    """Normalize a scalar or coefficient sequence to an ascending tuple."""
    if np.isscalar(entry):
        return (float(entry),)
    coeffs = tuple(float(c) for c in entry)
    if not coeffs:
        return (0.0,)
    return coeffs


def poly(coeffs: Coeffs) -> Polynomial:
    return Polynomial(list(coeffs))


def poly_extrema_on_unit_interval(p: Polynomial) -> tuple[float, float]:
    """Exact (min, max) of a polynomial on [0, 1] via critical points."""
    candidates = [0.0, 1.0]
    dp = p.deriv()
    if dp.degree() >= 1 or (dp.degree() == 0 and dp.coef[0] != 0):
        for r in dp.roots():
            if abs(r.imag) < 1e-10 and -1e-12 <= r.real <= 1 + 1e-12:
                candidates.append(min(max(r.real, 0.0), 1.0))
    values = p(np.asarray(candidates))
    return float(values.min()), float(values.max())


def _coeff_matrix(entries, n: int, what: str) -> tuple[tuple[Coeffs, ...], ...]:
    rows = list(entries)
    if len(rows) != n:
        raise ValueError(f"{what} must have {n} rows, got {len(rows)}")
    out = []
    for row in rows:
        cells = list(row)
        if len(cells) != n:
            raise ValueError(f"{what} rows must have {n} entries, got {len(cells)}")
        out.append(tuple(as_coeffs(c) for c in cells))
    return tuple(out)


@dataclass(frozen=True)
class ProblemSpec:
    """Coupled plant u_t = (Sigma(x) u_x)_x + Phi(x) u_x + Lambda(x) u.

    Parameters
    ----------
    n : number of coupled states.
    sigma : n ascending coefficient lists, one polynomial eps_i(x) per state
        (the diagonal of Sigma).
    phi : n x n coefficient lists for the advection matrix Phi(x).
    lam : n x n coefficient lists for the reaction matrix Lambda(x).
    """

    n: int
    sigma: tuple[Coeffs, ...]
    phi: tuple[tuple[Coeffs, ...], ...]
    lam: tuple[tuple[Coeffs, ...], ...]

    def __init__(self, n: int, sigma, phi, lam):
        if n < 1:
            raise ValueError("n must be a positive integer")
        sig = tuple(as_coeffs(c) for c in sigma)
        if len(sig) != n:
            raise ValueError(f"sigma must have {n} entries, got {len(sig)}")
        phi_m = _coeff_matrix(phi, n, "phi")
        lam_m = _coeff_matrix(lam, n, "lam")
        for name, entries in (("sigma", sig), ("phi", sum(phi_m, ())), ("lam", sum(lam_m, ()))):
            for c in entries:
                if len(c) - 1 > MAX_POLY_DEGREE:
                    raise ValueError(
                        f"{name} entry degree {len(c) - 1} exceeds maximum {MAX_POLY_DEGREE}"
                    )
                if not np.all(np.isfinite(c)):
                    raise ValueError(f"{name} entry has non-finite coefficients")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "phi", phi_m)
        object.__setattr__(self, "lam", lam_m)

    # -- polynomial accessors -------------------------------------------------
    def eps(self, i: int) -> Polynomial:
        return poly(self.sigma[i])

    def phi_poly(self, i: int, j: int) -> Polynomial:
        return poly(self.phi[i][j])

    def lam_poly(self, i: int, j: int) -> Polynomial:
        return poly(self.lam[i][j])

    # -- vectorized sampling ---------------------------------------------------
    def eval_sigma(self, x) -> np.ndarray:
        """Diagonal Sigma entries at x; shape (len(x), n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([self.eps(i)(x) for i in range(self.n)], axis=-1)

    def eval_sigma_prime(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([self.eps(i).deriv()(x) for i in range(self.n)], axis=-1)

    def eval_phi(self, x) -> np.ndarray:
        """Phi(x); shape (len(x), n, n)."""
        return self._eval_matrix(self.phi, x)

    def eval_phi_prime(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                out[:, i, j] = poly(self.phi[i][j]).deriv()(x)
        return out

    def eval_lambda(self, x) -> np.ndarray:
        return self._eval_matrix(self.lam, x)

    def _eval_matrix(self, entries, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                out[:, i, j] = poly(entries[i][j])(x)
        return out

    # -- packed coefficient arrays for the compiled kernels --------------------
    def packed_coeffs(self):
        """(eps, eps', lam) coefficients padded to a common degree.

        Returns float64 arrays of shapes (n, D), (n, D), (n, n, D).
        """
        degs = [len(c) for c in self.sigma]
        degs += [len(c) for row in self.lam for c in row]
        d = max(degs)
        eps_c = np.zeros((self.n, d))
        deps_c = np.zeros((self.n, d))
        lam_c = np.zeros((self.n, self.n, d))
        for i in range(self.n):
            eps_c[i, : len(self.sigma[i])] = self.sigma[i]
            der = np.polynomial.polynomial.polyder(np.asarray(self.sigma[i]))
            deps_c[i, : len(der)] = der
            for j in range(self.n):
                lam_c[i, j, : len(self.lam[i][j])] = self.lam[i][j]
        return eps_c, deps_c, lam_c


@dataclass(frozen=True)
class Grid:
    """Uniform grid: m spatial intervals on [0, 1] and a time step dt.

    The kernel domain is the triangle {0 <= xi <= x <= 1} sampled on the
    same spacing; it holds (m+1)(m+2)/2 nodes.
    """

    m: int
    dt: float

    def __post_init__(self):
        if self.m < 8:
            raise ValueError(f"m must be >= 8, got {self.m}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m + 1)

    @property
    def triangle_node_count(self) -> int:
        return (self.m + 1) * (self.m + 2) // 2


@dataclass
class CoefficientBounds:
    """Scalar bounds consumed by the stability certificate.

    p            sup_x of the operator 2-norm of Phi(x) (inflated 1%).
    eps_lo/hi    exact range of the diffusivities over [0, 1] and all states.
    eps_prime_hi exact sup of |eps_i'(x)|.
    g            sup |g_ij(x)| over the extracted coupling matrix (inflated
                 1%); filled in by the analysis stage, absent until then.
    """

    p: float
    eps_lo: float
    eps_hi: float
    eps_prime_hi: float
    g: Optional[float] = None

    def __post_init__(self):
        if min(self.p, self.eps_lo, self.eps_hi, self.eps_prime_hi) < 0:
            raise ValueError("bounds must be nonnegative")
        if self.eps_lo > self.eps_hi:
            raise ValueError("eps_lo must not exceed eps_hi")


@dataclass(frozen=True)
class ValidatedProblem:
    """Wrapper certifying that ordering and positivity checks passed."""

    spec: ProblemSpec

    @property
    def n(self) -> int:
        return self.spec.n

    def __getattr__(self, name):
        return getattr(self.spec, name)


def validate_problem(spec: ProblemSpec, grid: Grid) -> ValidatedProblem:
    """Check the strict diffusivity ordering eps_1 > ... > eps_n > 0 on [0, 1].

    The check runs pointwise on a validation grid (at least as fine as the
    solver grid) and exactly at the polynomial critical points of each
    eps_i - eps_{i+1} difference, so ordering violations between grid nodes
    are caught.  Equal diffusivities are rejected, not perturbed.

    Raises
    ------
    OrderingViolation, NonPositiveDiffusivity
    """
    n = spec.n
    xs = np.linspace(0.0, 1.0, max(grid.m, 256) + 1)

    # positivity of the smallest diffusivity
    eps_n = spec.eps(n - 1)
    vals = eps_n(xs)
    if vals.min() <= 0.0:
        k = int(np.argmin(vals))
        raise NonPositiveDiffusivity(n - 1, float(xs[k]), float(vals[k]))
    lo, _ = poly_extrema_on_unit_interval(eps_n)
    if lo <= 0.0:
        x_at = _argmin_on_interval(eps_n)
        raise NonPositiveDiffusivity(n - 1, x_at, lo)

    # strict ordering of consecutive differences
    for i in range(n - 1):
        diff = spec.eps(i) - spec.eps(i + 1)
        dvals = diff(xs)
        if dvals.min() <= 0.0:
            k = int(np.argmin(dvals))
            raise OrderingViolation(i, float(xs[k]), float(dvals[k]))
        dlo, _ = poly_extrema_on_unit_interval(diff)
        if dlo <= 0.0:
            raise OrderingViolation(i, _argmin_on_interval(diff), dlo)

    return ValidatedProblem(spec)


def _argmin_on_interval(p: Polynomial) -> float:
    candidates = [0.0, 1.0]
    dp = p.deriv()
    if dp.degree() >= 1 or (dp.degree() == 0 and dp.coef[0] != 0):
        for r in dp.roots():
            if abs(r.imag) < 1e-10 and 0.0 <= r.real <= 1.0:
                candidates.append(r.real)
    candidates = np.asarray(candidates)
    return float(candidates[np.argmin(p(candidates))])


def coefficient_bounds(validated: ValidatedProblem) -> CoefficientBounds:
    """Compute p, eps_lo, eps_hi, eps_prime_hi for a validated plant.

    The diffusivity range and derivative sup are polynomial extrema and are
    computed exactly from critical points.  The operator-norm sup p is not
    polynomial, so it is estimated by dense sampling (>= 10 * degree points
    per entry, floor of 101) and inflated by 1%; the bounds feed a
    sufficient-condition certificate, so the conservatism is safe.  The g
    field is left unset until a kernel has been solved.
    """
    spec = validated.spec
    n = spec.n

    lo = np.inf
    hi = -np.inf
    dhi = 0.0
    for i in range(n):
        a, b = poly_extrema_on_unit_interval(spec.eps(i))
        lo = min(lo, a)
        hi = max(hi, b)
        dmin, dmax = poly_extrema_on_unit_interval(spec.eps(i).deriv())
        dhi = max(dhi, abs(dmin), abs(dmax))

    max_deg = max(len(c) - 1 for row in spec.phi for c in row)
    samples = max(10 * max_deg, 100) + 1
    xs = np.linspace(0.0, 1.0, samples)
    phi_vals = spec.eval_phi(xs)
    p = float(np.linalg.norm(phi_vals, ord=2, axis=(1, 2)).max()) * BOUND_INFLATION

    return CoefficientBounds(p=p, eps_lo=lo, eps_hi=hi, eps_prime_hi=dhi)
