#!/usr/bin/env python3
"""Compare the jitted kernel solver against the plain-Python fallback.

The hot loops in backstep._kernels are numba-compiled by default; setting
BACKSTEP_NUMBA=0 makes the same code run uncompiled.  This script times the
scalar benchmark solve at a few grid sizes under both settings (each in a
fresh interpreter so the flag takes effect) and prints the speedup.

Usage: python benchmarks/bench_kernel.py [--sizes 16,32] [--n2]
"""

import argparse
import os
import subprocess
import sys

SNIPPET = r"""
import time
import numpy as np
from backstep import ProblemSpec, Grid, validate_problem, solve_kernel
from backstep._accel import backend

m = {m}
if {two_state}:
    spec = ProblemSpec(n=2, sigma=[[2.0], [1.0]],
                       phi=[[[0.0], [0.0]], [[0.0], [0.0]]],
                       lam=[[[4.0], [1.0]], [[2.0], [3.0]]])
    C = [1.0, 1.0]
else:
    spec = ProblemSpec(n=1, sigma=[[1.0]], phi=[[[0.0]]], lam=[[[10.0]]])
    C = [5.0]
grid = Grid(m=m, dt=1e-3)
v = validate_problem(spec, grid)
solve_kernel(v, C, Grid(m=8, dt=1e-3) if m > 8 else grid)  # warm the JIT
t0 = time.perf_counter()
fld = solve_kernel(v, C, grid)
dt = time.perf_counter() - t0
print(f"{{backend()}} {{dt:.4f}} {{np.abs(fld.K).max():.12e}}")
"""


def run_case(m: int, two_state: bool, numba: bool) -> tuple[str, float, float]:
    env = dict(os.environ)
    env["BACKSTEP_NUMBA"] = "1" if numba else "0"
    code = SNIPPET.format(m=m, two_state=two_state)
    res = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    name, secs, kmax = res.stdout.split()
    return name, float(secs), float(kmax)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="16,32",
                    help="comma-separated grid sizes (fallback is slow above 32)")
    ap.add_argument("--n2", action="store_true",
                    help="use the coupled two-state benchmark instead of scalar")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"{'m':>6} {'numba (s)':>12} {'numpy (s)':>12} {'speedup':>9}   max|K| agreement")
    for m in sizes:
        _, t_jit, k_jit = run_case(m, args.n2, numba=True)
        _, t_py, k_py = run_case(m, args.n2, numba=False)
        agree = abs(k_jit - k_py) <= 1e-12 * max(1.0, abs(k_jit))
        print(f"{m:>6} {t_jit:>12.4f} {t_py:>12.4f} {t_py / t_jit:>8.1f}x"
              f"   {'ok' if agree else 'MISMATCH'}")


if __name__ == "__main__":
    main()
