"""Scenario files: a YAML document describing plant, grid, controller,
run parameters, and (optionally) kernel free data and an oracle reference.

Schema (version 1) -- see README for the full field list:

    schema_version: 1
    name: bench
    problem: {n, sigma, phi, lambda}     # ascending poly coefficient lists
    grid: {m, dt}
    control: {c, alpha1, delta?}
    run: {T, save_every, mode}           # mode: open | closed | both
    initial: {kind: sine, amplitude, mode} | {kind: csv, path}
    solver: {tol?, max_iter?}
    kernel_free_data: {"i,j": [coeffs]}  # optional, i > j (1-based)
    reference: scalar-series             # optional oracle comparison
    out: dir                             # optional default output directory

Validation errors cite the offending field path (and the YAML line for
syntax errors).  Kernel artifacts are keyed by a content hash of the
problem, grid, control, and kernel_free_data sections, so the simulate
stage can refuse stale kernels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ScenarioError
from .problem import Grid, ProblemSpec
from .transform import StateField

SCHEMA_VERSION = 1
RUN_MODES = ("open", "closed", "both")
REFERENCES = ("scalar-series",)


@dataclass
class ControlConfig:
    c: tuple[float, ...]
    alpha1: float
    delta: Optional[float] = None


@dataclass
class RunConfig:
    T: float
    save_every: int
    mode: str


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 10_000


@dataclass
class InitialConfig:
    kind: str
    amplitude: tuple[float, ...] = ()
    mode: int = 1
    path: str = ""

    def build(self, grid: Grid, n: int, base_dir: Path) -> StateField:
        if self.kind == "sine":
            amps = np.asarray(self.amplitude, dtype=float)
            x = grid.x
            values = np.sin(self.mode * np.pi * x)[:, None] * amps[None, :]
            return StateField(values=values, time=0.0, grid=grid)
        with open(base_dir / self.path) as fh:
            rows = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        data = np.loadtxt(rows[1:], delimiter=",", ndmin=2)
        if data.shape[0] != grid.m + 1 or data.shape[1] != n + 1:
            raise ScenarioError(
                f"initial-state CSV has shape {data.shape}, expected "
                f"({grid.m + 1}, {n + 1})", field="initial.path")
        return StateField(values=data[:, 1:], time=0.0, grid=grid)


@dataclass
class Scenario:
    name: str
    problem: ProblemSpec
    grid: Grid
    control: ControlConfig
    run: RunConfig
    initial: InitialConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    free_data: Optional[dict] = None
    reference: Optional[str] = None
    out: Optional[str] = None
    base_dir: Path = Path(".")
    source_path: Optional[Path] = None
    raw: dict = field(default_factory=dict)

    def content_hash(self) -> str:
        """Hash of the sections that determine the kernel artifacts."""
        payload = {
            "problem": self.raw.get("problem"),
            "grid": self.raw.get("grid"),
            "control": self.raw.get("control"),
            "kernel_free_data": self.raw.get("kernel_free_data"),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def initial_state(self) -> StateField:
        return self.initial.build(self.grid, self.problem.n, self.base_dir)


def _need(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ScenarioError("missing required field", field=f"{path}.{key}" if path else key)
    return mapping[key]


def _as_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"expected a mapping, got {type(value).__name__}",
                            field=path)
    return value


def _positive(value, path: str, kind=float):
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"expected a number, got {value!r}", field=path)
    if v <= 0:
        raise ScenarioError(f"must be positive, got {v}", field=path)
    return v


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file.

    Raises ScenarioError (exit code 2 in the CLI) naming the field for every
    schema problem; YAML syntax errors carry the source line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ScenarioError(f"invalid YAML: {exc}", line=line)
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping at top level")

    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r} "
                            f"(expected {SCHEMA_VERSION})", field="schema_version")

    prob = _as_mapping(_need(raw, "problem", ""), "problem")
    n = _need(prob, "n", "problem")
    if not isinstance(n, int) or n < 1:
        raise ScenarioError(f"n must be a positive integer, got {n!r}",
                            field="problem.n")
    try:
        spec = ProblemSpec(n=n, sigma=_need(prob, "sigma", "problem"),
                           phi=_need(prob, "phi", "problem"),
                           lam=_need(prob, "lambda", "problem"))
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc), field="problem")

    grid_map = _as_mapping(_need(raw, "grid", ""), "grid")
    m = _need(grid_map, "m", "grid")
    if not isinstance(m, int):
        raise ScenarioError(f"m must be an integer, got {m!r}", field="grid.m")
    dt = _positive(_need(grid_map, "dt", "grid"), "grid.dt")
    try:
        grid = Grid(m=m, dt=dt)
    except ValueError as exc:
        raise ScenarioError(str(exc), field="grid")

    ctrl = _as_mapping(_need(raw, "control", ""), "control")
    c_entries = _need(ctrl, "c", "control")
    if not isinstance(c_entries, (list, tuple)) or len(c_entries) != n:
        raise ScenarioError(f"c must list {n} entries", field="control.c")
    c = tuple(_positive(v, f"control.c[{k}]") for k, v in enumerate(c_entries))
    alpha1 = _positive(_need(ctrl, "alpha1", "control"), "control.alpha1")
    delta = ctrl.get("delta")
    if delta is not None:
        delta = _positive(delta, "control.delta")
    control = ControlConfig(c=c, alpha1=alpha1, delta=delta)

    run_map = _as_mapping(_need(raw, "run", ""), "run")
    mode = _need(run_map, "mode", "run")
    if mode not in RUN_MODES:
        raise ScenarioError(f"mode must be one of {RUN_MODES}, got {mode!r}",
                            field="run.mode")
    run = RunConfig(T=_positive(_need(run_map, "T", "run"), "run.T"),
                    save_every=int(_positive(_need(run_map, "save_every", "run"),
                                             "run.save_every", int)),
                    mode=mode)

    init_map = _as_mapping(_need(raw, "initial", ""), "initial")
    kind = _need(init_map, "kind", "initial")
    if kind == "sine":
        amps = _need(init_map, "amplitude", "initial")
        if not isinstance(amps, (list, tuple)) or len(amps) != n:
            raise ScenarioError(f"amplitude must list {n} entries",
                                field="initial.amplitude")
        initial = InitialConfig(kind="sine",
                                amplitude=tuple(float(a) for a in amps),
                                mode=int(init_map.get("mode", 1)))
    elif kind == "csv":
        initial = InitialConfig(kind="csv", path=str(_need(init_map, "path", "initial")))
        if not (path.parent / initial.path).exists():
            raise ScenarioError(f"referenced file {initial.path!r} does not exist",
                                field="initial.path")
    else:
        raise ScenarioError(f"kind must be 'sine' or 'csv', got {kind!r}",
                            field="initial.kind")

    solver = SolverConfig()
    if "solver" in raw:
        sol = _as_mapping(raw["solver"], "solver")
        if "tol" in sol:
            solver.tol = _positive(sol["tol"], "solver.tol")
        if "max_iter" in sol:
            solver.max_iter = int(_positive(sol["max_iter"], "solver.max_iter", int))

    free_data = None
    if "kernel_free_data" in raw and raw["kernel_free_data"]:
        fd_map = _as_mapping(raw["kernel_free_data"], "kernel_free_data")
        free_data = {}
        for key, coeffs in fd_map.items():
            try:
                i_s, j_s = str(key).split(",")
                i, j = int(i_s) - 1, int(j_s) - 1
            except ValueError:
                raise ScenarioError(f"keys must look like 'i,j', got {key!r}",
                                    field="kernel_free_data")
            if not (0 <= j < i < n):
                raise ScenarioError(f"entry ({key}) must have n >= i > j >= 1",
                                    field=f"kernel_free_data.{key}")
            cs = tuple(float(v) for v in coeffs)
            if abs(sum(cs)) > 1e-12:
                raise ScenarioError("free data must vanish at xi = 1",
                                    field=f"kernel_free_data.{key}")
            free_data[(i, j)] = cs

    reference = raw.get("reference")
    if reference is not None and reference not in REFERENCES:
        raise ScenarioError(f"reference must be one of {REFERENCES}",
                            field="reference")
    if reference == "scalar-series":
        if n != 1 or len(spec.sigma[0]) > 1 or len(spec.lam[0][0]) > 1 \
                or any(v != 0.0 for v in spec.phi[0][0]):
            raise ScenarioError(
                "scalar-series reference needs n=1 with constant sigma/lambda "
                "and zero phi", field="reference")

    return Scenario(name=str(raw.get("name", path.stem)), problem=spec,
                    grid=grid, control=control, run=run, initial=initial,
                    solver=solver, free_data=free_data, reference=reference,
                    out=raw.get("out"), base_dir=path.parent,
                    source_path=path, raw=raw)
