"""The BACKSTEP_NUMBA=0 fallback path produces the same kernels."""

import os
import subprocess
import sys

import numpy as np

from backstep.artifacts import read_kernel

from test_cli import write_scenario


def _solve_with_backend(tmp_path, scen, out_name, numba_flag):
    env = dict(os.environ)
    env["BACKSTEP_NUMBA"] = numba_flag
    out = tmp_path / out_name
    res = subprocess.run(
        [sys.executable, "-m", "backstep", "solve", "--scenario", str(scen),
         "--out", str(out)],
        capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    return read_kernel(out / "kernel.csv")[0]


def test_fallback_matches_jitted(tmp_path):
    scen = write_scenario(tmp_path)
    jit = _solve_with_backend(tmp_path, scen, "jit", "1")
    py = _solve_with_backend(tmp_path, scen, "py", "0")
    assert jit.backend == "numba"
    assert py.backend == "numpy"
    assert jit.iterations == py.iterations
    np.testing.assert_allclose(py.K, jit.K, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(py.L, jit.L, rtol=1e-12, atol=1e-14)
