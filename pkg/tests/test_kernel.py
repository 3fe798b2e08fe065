import numpy as np
import pytest

from backstep import (
    Grid,
    KernelField,
    ProblemSpec,
    assemble_boundary_data,
    compute_reduction,
    extract_G,
    kernel_residual,
    solve_kernel,
    validate_problem,
)
from backstep.errors import GridTooCoarse, NoConvergence, StructureViolation
from backstep.reference import scalar_kernel, scalar_kernel_on_grid

from conftest import SCALAR_C, SCALAR_SPEC, UNSTABLE_C, UNSTABLE_SPEC, make_grid


# -- reduction fields --------------------------------------------------------

def test_reduction_zero_advection_constant_eps():
    grid = make_grid(16)
    spec = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.0]]], lam=[[[3.0]]])
    red = compute_reduction(validate_problem(spec, grid), [2.0], grid)
    assert np.all(red.F1 == 0.0)
    assert np.all(red.F2 == 0.0)
    # F3 = Lambda, F4 = C when the slope terms vanish
    assert red.F3[0, 0] == pytest.approx(3.0)
    assert red.F4[0, 0] == pytest.approx(2.0)


def test_reduction_constant_advection():
    grid = make_grid(16)
    spec = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.7]]], lam=[[[0.0]]])
    red = compute_reduction(validate_problem(spec, grid), [1.0], grid)
    np.testing.assert_allclose(red.F1[0, 0], 0.35, rtol=1e-14)
    np.testing.assert_allclose(red.F2[0, 0], -0.35, rtol=1e-14)


def test_reduction_offdiagonal_denominator():
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[4.0], [1.0]],
                       phi=[[[0.0], [1.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [0.0]], [[0.0], [0.0]]])
    red = compute_reduction(validate_problem(spec, grid), [1.0, 1.0], grid)
    np.testing.assert_allclose(red.F1[0, 1], 1.0 / 3.0, rtol=1e-14)


def test_reduction_invariant_formulas_at_nodes():
    # formulas hold exactly at grid nodes for polynomial data
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[2.0, 0.5], [1.0]],
                       phi=[[[0.1], [0.0, 1.0]], [[0.0], [-0.2]]],
                       lam=[[[4.0], [1.0]], [[2.0], [3.0]]])
    v = validate_problem(spec, grid)
    c = np.array([2.0, 1.0])
    red = compute_reduction(v, c, grid)
    x = grid.x
    eps = spec.eval_sigma(x)
    deps = spec.eval_sigma_prime(x)
    phi = spec.eval_phi(x)
    seps = np.sqrt(eps)
    for i in range(2):
        for j in range(2):
            num = (deps[:, i] / 2.0 if i == j else 0.0) + phi[:, i, j]
            np.testing.assert_allclose(red.F1[i, j],
                                       num / (seps[:, i] + seps[:, j]),
                                       rtol=1e-13, atol=1e-15)
    lam = spec.eval_lambda(x)
    dphi = spec.eval_phi_prime(x)
    f2sq = np.einsum("ikm,kjm->ijm", red.F2, red.F2)
    # recompute F2' by finite differences as an independent check (loose tol)
    dgrid = 1e-6
    f2p = (compute_reduction(v, c, grid).F2 - _f2_at(v, c, x - dgrid)) / dgrid
    f3_expected = (lam.transpose(1, 2, 0) - dphi.transpose(1, 2, 0)
                   - f2p * seps.T[None, :, :] - f2sq)
    np.testing.assert_allclose(red.F3, f3_expected, rtol=1e-5, atol=1e-5)


def _f2_at(validated, c, pts):
    spec = validated.spec
    eps = spec.eval_sigma(pts)
    deps = spec.eval_sigma_prime(pts)
    phi = spec.eval_phi(pts)
    seps = np.sqrt(eps)
    out = np.empty((2, 2, pts.shape[0]))
    for i in range(2):
        for j in range(2):
            num = (deps[:, i] / 2.0 if i == j else 0.0) - phi[:, i, j]
            out[i, j] = num / (seps[:, i] + seps[:, j])
    return out


# -- boundary data -----------------------------------------------------------

def test_diagonal_trace_constant_coefficients():
    grid = make_grid(16)
    spec = ProblemSpec(n=1, sigma=[[2.0]], phi=[[[0.0]]], lam=[[[3.0]]])
    bd = assemble_boundary_data(validate_problem(spec, grid), [1.0], grid)
    expected = -(3.0 + 1.0) * grid.x / (2.0 * 2.0)
    np.testing.assert_allclose(bd.K_diag[0], expected, rtol=1e-13, atol=1e-15)


def test_traces_zero_for_zero_data():
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[2.0], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [0.0]], [[0.0], [0.0]]])
    bd = assemble_boundary_data(validate_problem(spec, grid), [0.0, 0.0], grid)
    assert np.all(bd.K_diag == 0.0)
    assert np.all(bd.L_diag == 0.0)


def test_offdiagonal_L_trace():
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[4.0], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [3.0]], [[0.0], [0.0]]])
    bd = assemble_boundary_data(validate_problem(spec, grid), [1.0, 1.0], grid)
    np.testing.assert_allclose(bd.L_diag[0, 1], -1.0, rtol=1e-14)


def test_free_data_must_vanish_at_one():
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[2.0], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [0.0]], [[1.0], [0.0]]])
    v = validate_problem(spec, grid)
    with pytest.raises(ValueError, match="vanish"):
        assemble_boundary_data(v, [1.0, 1.0], grid, l_overrides={(1, 0): (1.0,)})
    with pytest.raises(ValueError, match="i > j"):
        assemble_boundary_data(v, [1.0, 1.0], grid, l_overrides={(0, 1): (1.0, -1.0)})


# -- solver ------------------------------------------------------------------

def test_zero_data_fixed_point_exact():
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[2.0], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [0.0]], [[0.0], [0.0]]])
    fld = solve_kernel(validate_problem(spec, grid), [0.0, 0.0], grid)
    assert np.all(fld.K == 0.0)
    assert np.all(fld.L == 0.0)
    assert fld.iterations == 1


def test_scalar_solution_matches_series_oracle():
    # oracle first: the series field satisfies the scalar kernel system
    # k_xx - k_xixi = (lam + c) k to discretization accuracy, refining at
    # second order, and carries the right boundary data
    mu = SCALAR_SPEC.lam[0][0][0] + SCALAR_C[0]
    res_prev = None
    for m in (32, 64):
        h = 1.0 / m
        k = scalar_kernel_on_grid(SCALAR_SPEC.lam[0][0][0], SCALAR_C[0], m)
        A, B = np.meshgrid(np.arange(1, m), np.arange(1, m), indexing="ij")
        keep = B <= A - 1
        A, B = A[keep], B[keep]
        res = np.abs((k[A + 1, B] - 2 * k[A, B] + k[A - 1, B]) / h**2
                     - (k[A, B + 1] - 2 * k[A, B] + k[A, B - 1]) / h**2
                     - mu * k[A, B]).max()
        if res_prev is not None:
            assert res_prev / res > 3.0
        res_prev = res
        xs = np.linspace(0, 1, m + 1)
        np.testing.assert_allclose(np.diagonal(k), -mu * xs / 2.0, atol=1e-12)
        assert np.abs(k[:, 0]).max() == 0.0

    grid = make_grid(64)
    fld = solve_kernel(validate_problem(SCALAR_SPEC, grid), SCALAR_C, grid)
    oracle = scalar_kernel_on_grid(10.0, 5.0, 64)
    assert np.abs(fld.K[0, 0] - oracle).max() < 5e-3


def test_diagonal_coefficients_decouple_entries():
    grid = make_grid(24)
    spec = ProblemSpec(n=2, sigma=[[2.0], [1.0]],
                       phi=[[[0.3], [0.0]], [[0.0], [-0.2]]],
                       lam=[[[4.0], [0.0]], [[0.0], [3.0]]])
    fld = solve_kernel(validate_problem(spec, grid), [1.0, 1.0], grid)
    assert np.abs(fld.K[0, 1]).max() == 0.0
    assert np.abs(fld.K[1, 0]).max() == 0.0
    assert np.abs(fld.L[0, 1]).max() == 0.0
    assert np.abs(fld.L[1, 0]).max() == 0.0
    # diagonal entries solve independent scalar problems (the standalone
    # scalar solve picks a different sub-step count, so agreement is at the
    # discretization level, not bitwise)
    scalar = ProblemSpec(n=1, sigma=[[2.0]], phi=[[[0.3]]], lam=[[[4.0]]])
    fld1 = solve_kernel(validate_problem(scalar, grid), [1.0], grid)
    np.testing.assert_allclose(fld.K[0, 0], fld1.K[0, 0], atol=1e-3)


def test_solver_deterministic_bitwise():
    grid = make_grid(24)
    v = validate_problem(UNSTABLE_SPEC, grid)
    a = solve_kernel(v, UNSTABLE_C, grid)
    b = solve_kernel(v, UNSTABLE_C, grid)
    assert np.array_equal(a.K, b.K)
    assert np.array_equal(a.L, b.L)


def test_traces_imposed_exactly(unstable_field_64):
    fld = unstable_field_64
    grid = fld.grid
    v = validate_problem(UNSTABLE_SPEC, grid)
    bd = assemble_boundary_data(v, UNSTABLE_C, grid)
    diag = np.arange(grid.m + 1)
    for i in range(2):
        for j in range(2):
            if i == j:
                assert np.array_equal(fld.K[i, i, diag, diag], bd.K_diag[i])
            else:
                assert np.abs(fld.K[i, j, diag, diag]).max() == 0.0
            assert np.array_equal(fld.L[i, j, diag, diag], bd.L_diag[i, j])
    # bottom-edge condition for i <= j
    assert np.abs(fld.K[0, 0, :, 0]).max() == 0.0
    assert np.abs(fld.K[0, 1, :, 0]).max() == 0.0
    assert np.abs(fld.K[1, 1, :, 0]).max() == 0.0


def test_no_convergence_error():
    grid = make_grid(16)
    v = validate_problem(UNSTABLE_SPEC, grid)
    with pytest.raises(NoConvergence) as exc:
        solve_kernel(v, UNSTABLE_C, grid, max_iter=2)
    assert exc.value.iterations == 2
    assert exc.value.residual > 0


def test_grid_too_coarse_for_extreme_anisotropy():
    spec = ProblemSpec(n=2, sigma=[[5.0e6], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [0.0]], [[0.0], [0.0]]])
    grid = make_grid(16)
    with pytest.raises(GridTooCoarse):
        solve_kernel(validate_problem(spec, grid), [1.0, 1.0], grid)


# -- residual report ---------------------------------------------------------

def test_zero_field_zero_residuals():
    grid = make_grid(16)
    spec = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.0]]], lam=[[[0.0]]])
    v = validate_problem(spec, grid)
    fld = solve_kernel(v, [0.0], grid)
    rep = kernel_residual(fld, v, [0.0])
    assert all(v == 0.0 for v in rep.overall().values())


def test_perturbed_node_stencil_response():
    grid = make_grid(16)
    h = grid.h
    spec = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.0]]], lam=[[[0.0]]])
    v = validate_problem(spec, grid)
    fld = solve_kernel(v, [0.0], grid)
    fld.K[0, 0, 8, 4] += 0.1
    rep = kernel_residual(fld, v, [0.0])
    assert rep.pde2[0, 0] >= 0.1 / h**2 * (1.0 - 1e-12)


def test_interior_residual_refines(scalar_field_64):
    grid32 = make_grid(32)
    v32 = validate_problem(SCALAR_SPEC, grid32)
    fld32 = solve_kernel(v32, SCALAR_C, grid32)
    rep32 = kernel_residual(fld32, v32, SCALAR_C)
    v64 = validate_problem(SCALAR_SPEC, scalar_field_64.grid)
    rep64 = kernel_residual(scalar_field_64, v64, SCALAR_C)
    for key in ("pde2", "fo_K", "fo_L", "bc1"):
        assert rep32.overall()[key] / rep64.overall()[key] >= 1.8


# -- G extraction ------------------------------------------------------------

def test_extract_G_scalar_is_zero(scalar_field_64):
    v = validate_problem(SCALAR_SPEC, scalar_field_64.grid)
    G = extract_G(scalar_field_64, v)
    assert G.values.shape == (65, 1, 1)
    assert np.all(G.values == 0.0)


def test_extract_G_zero_field():
    grid = make_grid(16)
    spec = ProblemSpec(n=2, sigma=[[2.0], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[0.0], [0.0]], [[0.0], [0.0]]])
    v = validate_problem(spec, grid)
    fld = solve_kernel(v, [0.0, 0.0], grid)
    assert np.all(extract_G(fld, v).values == 0.0)


def test_extract_G_unstable_benchmark(unstable_field_64):
    grid = unstable_field_64.grid
    v = validate_problem(UNSTABLE_SPEC, grid)
    G = extract_G(unstable_field_64, v)
    g21 = G.values[:, 1, 0]
    assert np.abs(g21).max() > 0.1
    eps1_at_0 = 2.0
    np.testing.assert_allclose(g21, -unstable_field_64.K[1, 0, :, 0] * eps1_at_0,
                               rtol=1e-14)
    # cross-check against a doubled grid
    grid2 = make_grid(128)
    v2 = validate_problem(UNSTABLE_SPEC, grid2)
    fld2 = solve_kernel(v2, UNSTABLE_C, grid2)
    g21_fine = extract_G(fld2, v2).values[::2, 1, 0]
    assert np.abs(g21 - g21_fine).max() <= 2e-2


def test_extract_G_structure_violation(scalar_field_64):
    corrupted = KernelField(K=scalar_field_64.K.copy(),
                            L=scalar_field_64.L.copy(),
                            grid=scalar_field_64.grid)
    corrupted.K[0, 0, 5, 0] = 1e-3
    v = validate_problem(SCALAR_SPEC, corrupted.grid)
    with pytest.raises(StructureViolation):
        extract_G(corrupted, v)


# -- series oracle sanity ------------------------------------------------------

def test_series_kernel_vectorized_and_diagonal():
    xs = np.linspace(0, 1, 11)
    vals = scalar_kernel(10.0, 5.0, xs, xs)
    np.testing.assert_allclose(vals, -15.0 * xs / 2.0, rtol=1e-14)
