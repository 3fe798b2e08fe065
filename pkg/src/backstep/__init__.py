"""Backstepping boundary feedback synthesis for coupled linear
reaction-advection-diffusion systems with spatially varying coefficients.

Pipeline: validate the plant, solve the transformation-kernel system through
its first-order hyperbolic reduction, certify stability constants, simulate
the closed loop, and verify kernel/target residuals.
"""

__version__ = "0.1.0"

from .problem import (
    CoefficientBounds,
    Grid,
    ProblemSpec,
    ValidatedProblem,
    coefficient_bounds,
    validate_problem,
)
from .kernel import (
    BoundaryData,
    GMatrix,
    KernelField,
    ReductionFields,
    ResidualReport,
    assemble_boundary_data,
    compute_reduction,
    corner_compatible_free_data,
    extract_G,
    kernel_residual,
    solve_kernel,
)
from .transform import (
    StateField,
    forward_transform,
    inverse_transform,
    norms,
    transform_bounds,
)
from .simulate import (
    Controller,
    Trajectory,
    estimate_dominant_rate,
    make_controller,
    simulate,
    step,
    target_residual,
)
from .analysis import (
    Constants,
    DecayFit,
    LyapunovValues,
    StabilityCertificate,
    build_Q,
    build_certificate,
    compute_constants,
    compute_cstar,
    fill_g_bound,
    fit_decay_rate,
    jacobi_eigenvalues,
    lql,
    lyapunov_values,
)
from .scenario import Scenario, load_scenario

__all__ = [
    "__version__",
    "CoefficientBounds", "Grid", "ProblemSpec", "ValidatedProblem",
    "coefficient_bounds", "validate_problem",
    "BoundaryData", "GMatrix", "KernelField", "ReductionFields",
    "ResidualReport", "assemble_boundary_data", "compute_reduction",
    "corner_compatible_free_data", "extract_G", "kernel_residual",
    "solve_kernel",
    "StateField", "forward_transform", "inverse_transform", "norms",
    "transform_bounds",
    "Controller", "Trajectory", "estimate_dominant_rate", "make_controller",
    "simulate", "step", "target_residual",
    "Constants", "DecayFit", "LyapunovValues", "StabilityCertificate",
    "build_Q", "build_certificate", "compute_constants", "compute_cstar",
    "fill_g_bound", "fit_decay_rate", "jacobi_eigenvalues", "lql",
    "lyapunov_values",
    "Scenario", "load_scenario",
]
