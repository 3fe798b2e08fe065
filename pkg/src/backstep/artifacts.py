"""Artifact readers/writers: kernel fields, residual reports, G matrices,
state fields, trajectories, certificates, and run metadata.

All CSVs are written with repeatable %.17g float formatting so repeated runs
produce byte-identical files; the only timestamp lives in meta.txt.

Kernel field layout (kernel.csv): comment header lines `# key=value`
carrying n, m, dt, scheme, tol, substeps, iterations, update_residual,
backend, scenario_hash, followed by one `a,b,i,j,K,L` record per triangle
node and entry (row-major in (a, b), xi_b <= x_a; i, j are 1-based).
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .errors import HashMismatch
from .kernel import GMatrix, KernelField, ResidualReport
from .problem import Grid
from .simulate import Trajectory
from .transform import StateField


def _fmt(v: float) -> str:
    return f"{v:.17g}"


# -- kernel field -----------------------------------------------------------

def write_kernel(path, fld: KernelField, scenario_hash: str = "") -> None:
    n, m = fld.n, fld.m
    lines = [
        "# backstep-kernel v1",
        f"# n={n}",
        f"# m={m}",
        f"# dt={_fmt(fld.grid.dt)}",
        f"# scheme={fld.scheme}",
        f"# tol={_fmt(fld.tol)}",
        f"# substeps={fld.substeps}",
        f"# iterations={fld.iterations}",
        f"# update_residual={_fmt(fld.update_residual)}",
        f"# backend={fld.backend}",
        f"# scenario_hash={scenario_hash}",
        "a,b,i,j,K,L",
    ]
    for a in range(m + 1):
        for b in range(a + 1):
            for i in range(n):
                for j in range(n):
                    lines.append(f"{a},{b},{i + 1},{j + 1},"
                                 f"{_fmt(fld.K[i, j, a, b])},{_fmt(fld.L[i, j, a, b])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_kernel(path) -> tuple[KernelField, str]:
    """Returns (field, scenario_hash)."""
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if line.startswith("a,"):
                continue
            rows.append(line)
    n = int(meta["n"])
    m = int(meta["m"])
    K = np.zeros((n, n, m + 1, m + 1))
    L = np.zeros((n, n, m + 1, m + 1))
    for line in rows:
        a_s, b_s, i_s, j_s, kv, lv = line.split(",")
        K[int(i_s) - 1, int(j_s) - 1, int(a_s), int(b_s)] = float(kv)
        L[int(i_s) - 1, int(j_s) - 1, int(a_s), int(b_s)] = float(lv)
    fld = KernelField(K=K, L=L, grid=Grid(m=m, dt=float(meta["dt"])),
                      scheme=meta.get("scheme", ""), tol=float(meta["tol"]),
                      iterations=int(meta["iterations"]),
                      update_residual=float(meta["update_residual"]),
                      substeps=int(meta.get("substeps", 1)),
                      backend=meta.get("backend", ""))
    return fld, meta.get("scenario_hash", "")


def check_hash(stored: str, expected: str) -> None:
    if stored != expected:
        raise HashMismatch(
            f"kernel artifacts were built from scenario hash {stored!r}, "
            f"current scenario hashes to {expected!r}; re-run solve")


# -- reports ---------------------------------------------------------------

def write_residuals(path, rep: ResidualReport) -> None:
    lines = ["check,i,j,max_abs"]
    for name, i, j, value in rep.rows():
        lines.append(f"{name},{i},{j},{_fmt(value)}")
    lines.append(f"update_residual,0,0,{_fmt(rep.update_residual)}")
    lines.append(f"iterations,0,0,{rep.iterations}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_gmatrix(path, G: GMatrix) -> None:
    n = G.n
    cols = [f"g_{i + 1}{j + 1}" for i in range(n) for j in range(n) if j < i]
    lines = ["x," + ",".join(cols)]
    x = G.grid.x
    for b in range(x.shape[0]):
        vals = [_fmt(G.values[b, i, j]) for i in range(n) for j in range(n) if j < i]
        lines.append(_fmt(x[b]) + "," + ",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_state(path, state: StateField) -> None:
    n = state.n
    lines = [f"# t={_fmt(state.time)}", "x," + ",".join(f"u{i + 1}" for i in range(n))]
    x = state.grid.x
    for b in range(x.shape[0]):
        lines.append(_fmt(x[b]) + "," + ",".join(_fmt(v) for v in state.values[b]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory(out_dir, traj: Trajectory) -> None:
    """norms.csv, control.csv, and snapshots/ under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = traj.control_series.shape[1] - 1
    with open(out / "norms.csv", "w") as fh:
        fh.write("t,L2,H1\n")
        for row in traj.norm_series:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(out / "control.csv", "w") as fh:
        fh.write("t," + ",".join(f"U{i + 1}" for i in range(n)) + "\n")
        for row in traj.control_series:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for k, snap in enumerate(traj.snapshots):
        write_state(snap_dir / f"snap_{k:06d}.csv", snap)


def write_certificate(txt_path, csv_path, cert, warn: Optional[str] = None) -> None:
    rows = list(cert.rows())
    width = max(len(name) for name, _ in rows)
    lines = ["stability certificate", "====================="]
    for name, value in rows:
        lines.append(f"{name:<{width}}  {_fmt(value) if value is not None else 'unset'}")
    a2, a3, a4 = cert.alphas
    for label, val in (("alpha2", a2), ("alpha3", a3), ("alpha4", a4)):
        lines.append(f"{label:<{width}}  {'unused' if val is None else _fmt(val)}")
    lines.append(f"{'satisfied':<{width}}  {cert.satisfied}")
    lines.append("")
    lines.append("evaluation order: bounds -> K5/K6/K8/alphas -> cstar -> Q -> K7 -> margin")
    if warn:
        lines.append(f"WARNING: {warn}")
    Path(txt_path).write_text("\n".join(lines) + "\n")

    csv_lines = ["name,value"]
    for name, value in rows:
        csv_lines.append(f"{name},{_fmt(value) if value is not None else ''}")
    Path(csv_path).write_text("\n".join(csv_lines) + "\n")


def write_meta(path, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")
