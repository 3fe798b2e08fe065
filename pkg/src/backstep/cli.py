"""Command-line front end: validate -> solve kernel -> certify -> simulate
-> verify, with reproducible scenario files and CSV outputs.

Exit codes: 0 success; 2 validation/scenario failure; 3 kernel solver
non-convergence; 4 certificate internal inconsistency; 5 non-finite
simulation state; 6 stale kernel artifacts (scenario hash mismatch);
1 unexpected error.
"""

from __future__ import annotations

import argparse
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, artifacts
from .analysis import build_certificate, fill_g_bound, fit_decay_rate
from .errors import (
    BackstepError,
    HashMismatch,
    NoConvergence,
    NonFiniteState,
    NonPositiveR,
    ScenarioError,
)
from .kernel import extract_G, kernel_residual, solve_kernel
from .problem import coefficient_bounds, validate_problem
from .scenario import Scenario, load_scenario
from .simulate import make_controller, simulate, target_residual

EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CERTIFICATE = 4
EXIT_NONFINITE = 5
EXIT_STALE = 6


def _out_dir(scenario: Scenario, args) -> Path:
    if args.out:
        base = Path(args.out)
        if getattr(args, "_multi", False):
            base = base / scenario.name
    elif scenario.out:
        base = scenario.base_dir / scenario.out
    else:
        base = Path("out") / scenario.name
    base.mkdir(parents=True, exist_ok=True)
    return base


def _provenance(scenario: Scenario, out: Path, extra: dict) -> None:
    if scenario.source_path and scenario.source_path.resolve() != (out / "scenario.yaml").resolve():
        shutil.copy(scenario.source_path, out / "scenario.yaml")
    entries = {
        "tool": "backstep",
        "version": __version__,
        "scenario": scenario.name,
        "scenario_hash": scenario.content_hash(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    entries.update(extra)
    artifacts.write_meta(out / "meta.txt", entries)


def cmd_solve(scenario: Scenario, args) -> int:
    out = _out_dir(scenario, args)
    validated = validate_problem(scenario.problem, scenario.grid)
    tol = args.tol if args.tol else scenario.solver.tol
    fld = solve_kernel(validated, scenario.control.c, scenario.grid, tol,
                       max_iter=scenario.solver.max_iter,
                       l_overrides=scenario.free_data)
    rep = kernel_residual(fld, validated, scenario.control.c)
    G = extract_G(fld, validated)
    shash = scenario.content_hash()
    artifacts.write_kernel(out / "kernel.csv", fld, shash)
    artifacts.write_residuals(out / "kernel_residual.csv", rep)
    artifacts.write_gmatrix(out / "gmatrix.csv", G)
    _provenance(scenario, out, {
        "stage": "solve", "m": scenario.grid.m, "dt": scenario.grid.dt,
        "scheme": fld.scheme, "backend": fld.backend, "tol": tol,
        "substeps": fld.substeps, "iterations": fld.iterations,
        "update_residual": fld.update_residual,
        "solve_seconds": f"{fld.solve_seconds:.3f}",
    })
    if scenario.reference == "scalar-series":
        _write_oracle_comparison(out, scenario, fld)
    print(f"[solve] {scenario.name}: converged in {fld.iterations} iterations, "
          f"update residual {fld.update_residual:.3e} <= tol {tol:g}")
    overall = rep.overall()
    print("[solve] finite-difference residuals: "
          + ", ".join(f"{k}={v:.3e}" for k, v in overall.items()))
    return 0


def _write_oracle_comparison(out: Path, scenario: Scenario, fld) -> None:
    from .reference import scalar_kernel_on_grid

    lam0 = scenario.problem.lam[0][0][0]
    c = scenario.control.c[0]
    eps = scenario.problem.sigma[0][0]
    ref = scalar_kernel_on_grid(lam0, c, fld.m, eps)
    err = np.abs(fld.K[0, 0] - ref)
    tri = np.tril(np.ones_like(err, dtype=bool))
    max_err = float(err[tri].max())
    lines = [f"# max_error={max_err:.17g}", "a,b,K_solved,K_reference,abs_error"]
    for a in range(fld.m + 1):
        for b in range(a + 1):
            lines.append(f"{a},{b},{fld.K[0, 0, a, b]:.17g},"
                         f"{ref[a, b]:.17g},{err[a, b]:.17g}")
    (out / "oracle_comparison.csv").write_text("\n".join(lines) + "\n")
    print(f"[solve] oracle comparison: max error {max_err:.3e}")


def cmd_certify(scenario: Scenario, args) -> int:
    out = _out_dir(scenario, args)
    kernel_path = out / "kernel.csv"
    if not kernel_path.exists():
        raise ScenarioError(f"no kernel artifacts in {out}; run solve first")
    fld, stored_hash = artifacts.read_kernel(kernel_path)
    artifacts.check_hash(stored_hash, scenario.content_hash())
    validated = validate_problem(scenario.problem, scenario.grid)
    G = extract_G(fld, validated)
    bounds = fill_g_bound(coefficient_bounds(validated), G)
    cert = build_certificate(bounds, scenario.control.c, scenario.problem.n)
    target = scenario.control.delta or 0.0
    warn = None
    if cert.delta <= target:
        warn = (f"supplied min c_i = {min(scenario.control.c):g} gives margin "
                f"delta = {cert.delta:.6g} <= target {target:g} "
                f"(cstar = {cert.cstar:.6g}); certificate not conclusive")
    artifacts.write_certificate(out / "certificate.txt", out / "certificate.csv",
                                cert, warn)
    print(f"[certify] {scenario.name}: cstar = {cert.cstar:.6g}, "
          f"margin delta = {cert.delta:.6g}, min eig R = {cert.min_eig_r:.3e}")
    if warn:
        print(f"[certify] WARNING: {warn}", file=sys.stderr)
    return 0


def cmd_simulate(scenario: Scenario, args) -> int:
    out = _out_dir(scenario, args)
    kernel_path = out / "kernel.csv"
    if not kernel_path.exists():
        raise ScenarioError(f"no kernel artifacts in {out}; run solve first")
    fld, stored_hash = artifacts.read_kernel(kernel_path)
    artifacts.check_hash(stored_hash, scenario.content_hash())
    validated = validate_problem(scenario.problem, scenario.grid)
    u0 = scenario.initial_state()
    G = extract_G(fld, validated)

    bounds = fill_g_bound(coefficient_bounds(validated), G)
    cert = build_certificate(bounds, scenario.control.c, scenario.problem.n)
    guaranteed = min(scenario.control.alpha1, 2.0 * max(cert.delta, 0.0))

    summary = [f"scenario={scenario.name}", f"cstar={cert.cstar:.6g}",
               f"delta={cert.delta:.6g}",
               f"guaranteed_rate=min(alpha1, 2 delta)={guaranteed:.6g}"]
    modes = ("open", "closed") if scenario.run.mode == "both" else (scenario.run.mode,)
    for mode in modes:
        controller = None
        if mode == "closed":
            controller = make_controller(fld, u0, scenario.control.c,
                                         scenario.control.alpha1)
        traj = simulate(validated, u0, controller, scenario.run.T,
                        scenario.grid, scenario.run.save_every)
        artifacts.write_trajectory(out / mode, traj)
        artifacts.write_meta(out / mode / "meta.txt", {
            "scheme": "implicit-trapezoidal",
            "mode": mode,
            "m": scenario.grid.m,
            "dt": scenario.grid.dt,
            "T": scenario.run.T,
            "save_every": scenario.run.save_every,
            "kernel_tol": fld.tol,
            "scenario_hash": stored_hash,
            "version": __version__,
        })
        series = traj.norm_series[:, [0, 2]]
        window = (0.25 * scenario.run.T, scenario.run.T)
        fit = fit_decay_rate(series, window)
        trend = "decaying" if fit.rate > 0 else "growing"
        summary.append(f"{mode}_fitted_H1_rate={fit.rate:.6g} ({trend})")
        print(f"[simulate] {scenario.name} {mode}: fitted H1 rate "
              f"{fit.rate:.4g} ({trend})")
        if mode == "closed":
            rep = target_residual(traj, fld, validated, scenario.control.c, G)
            lines = ["t,max_residual,l2_residual"]
            for k in range(rep.times.shape[0]):
                lines.append(f"{rep.times[k]:.17g},{rep.max_residual[k]:.17g},"
                             f"{rep.l2_residual[k]:.17g}")
            lines.append(f"# w0_mismatch_max={rep.w0_mismatch.max():.17g}")
            lines.append(f"# w1_mismatch_max={rep.w1_mismatch.max():.17g}")
            (out / "target_residual.csv").write_text("\n".join(lines) + "\n")
            summary.append(f"w1_mismatch_max={rep.w1_mismatch.max():.3e}")
            summary.append(f"closed_rate_vs_guaranteed="
                           f"{'ok' if fit.rate >= 0.8 * guaranteed else 'below'}")
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    return 0


def cmd_verify_all(scenario: Scenario, args) -> int:
    rc = cmd_solve(scenario, args)
    if rc:
        return rc
    rc = cmd_certify(scenario, args)
    if rc:
        return rc
    rc = cmd_simulate(scenario, args)
    if rc:
        return rc
    print(f"[verify-all] {scenario.name}: all stages completed")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "verify-all": cmd_verify_all,
}


def _run_one(command: str, scenario_path: str, args) -> int:
    try:
        scenario = load_scenario(scenario_path)
        return COMMANDS[command](scenario, args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NoConvergence,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except NonPositiveR as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except NonFiniteState as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except HashMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except BackstepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - unexpected
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


def _run_one_packed(packed):
    command, path, args = packed
    return _run_one(command, path, args)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="backstep",
        description="Backstepping boundary feedback synthesis and verification "
                    "for coupled reaction-advection-diffusion plants")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("solve", "solve the transformation kernel and write artifacts"),
            ("certify", "compute the stability certificate from solved artifacts"),
            ("simulate", "run open/closed-loop simulations and residual checks"),
            ("verify-all", "run solve, certify, and simulate in sequence")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, nargs="+",
                       help="scenario YAML file(s)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--tol", type=float, default=None,
                       help="override the solver tolerance")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for multiple scenarios")
    args = parser.parse_args(argv)

    paths = args.scenario
    args._multi = len(paths) > 1
    if len(paths) == 1 or args.jobs <= 1:
        first_error = 0
        for p in paths:
            rc = _run_one(args.command, p, args)
            first_error = first_error or rc
        return first_error
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(pool.map(_run_one_packed,
                              [(args.command, p, args) for p in paths]))
    return max(codes) if codes else 0


if __name__ == "__main__":
    sys.exit(main())
