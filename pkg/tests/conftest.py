import numpy as np
import pytest

from backstep import (
    Grid,
    ProblemSpec,
    corner_compatible_free_data,
    solve_kernel,
    validate_problem,
)

PI2 = np.pi**2

#: criterion-2 style benchmark: eps1 = 2 + x/2, eps2 = 1, phi12 = x,
#: constant reaction with lam21 = 2; free entries chosen so the kernel is
#: smooth (lam12 = 0 plus corner-compatible sub-diagonal edge data).
VAR_SPEC = ProblemSpec(
    n=2,
    sigma=[[2.0, 0.5], [1.0]],
    phi=[[[0.0], [0.0, 1.0]], [[0.0], [0.0]]],
    lam=[[[4.0], [0.0]], [[2.0], [3.0]]],
)
VAR_C = (2.0, 2.0)

#: criterion-5 unstable benchmark: Lambda = [[3 pi^2, 2], [2, 3 pi^2]],
#: Sigma = diag(2, 1), Phi = 0; cstar = 1/2, so c_i = cstar + 1 = 1.5.
UNSTABLE_SPEC = ProblemSpec(
    n=2,
    sigma=[[2.0], [1.0]],
    phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
    lam=[[[3 * PI2], [2.0]], [[2.0], [3 * PI2]]],
)
UNSTABLE_C = (1.5, 1.5)

SCALAR_SPEC = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.0]]], lam=[[[10.0]]])
SCALAR_C = (5.0,)


def make_grid(m: int, dt: float = 1e-4) -> Grid:
    return Grid(m=m, dt=dt)


@pytest.fixture(scope="session")
def var_free_data():
    v = validate_problem(VAR_SPEC, make_grid(32))
    return corner_compatible_free_data(v, VAR_C, order=2)


@pytest.fixture(scope="session")
def var_field_32(var_free_data):
    grid = make_grid(32)
    v = validate_problem(VAR_SPEC, grid)
    return solve_kernel(v, VAR_C, grid, l_overrides=var_free_data)


@pytest.fixture(scope="session")
def var_field_64(var_free_data):
    grid = make_grid(64)
    v = validate_problem(VAR_SPEC, grid)
    return solve_kernel(v, VAR_C, grid, l_overrides=var_free_data)


@pytest.fixture(scope="session")
def scalar_field_64():
    grid = make_grid(64)
    v = validate_problem(SCALAR_SPEC, grid)
    return solve_kernel(v, SCALAR_C, grid)


@pytest.fixture(scope="session")
def unstable_field_64():
    grid = make_grid(64)
    v = validate_problem(UNSTABLE_SPEC, grid)
    return solve_kernel(v, UNSTABLE_C, grid)
