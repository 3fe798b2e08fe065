"""Exception types raised across the package."""


class BackstepError(Exception):
    """Base class for all package-specific errors."""


class OrderingViolation(BackstepError):
    """Diffusivity ordering eps_1 > eps_2 > ... > eps_n fails somewhere."""

    def __init__(self, i: int, x: float, value: float):
        self.i = i
        self.x = x
        self.value = value
        super().__init__(
            f"eps_{i + 1}(x) - eps_{i + 2}(x) = {value:.6g} <= 0 at x = {x:.6g}; "
            "states must have strictly decreasing diffusivities"
        )


class NonPositiveDiffusivity(BackstepError):
    def __init__(self, i: int, x: float, value: float):
        self.i = i
        self.x = x
        self.value = value
        super().__init__(f"eps_{i + 1}(x) = {value:.6g} <= 0 at x = {x:.6g}")


class NoConvergence(BackstepError):
    """The kernel fixed-point iteration failed to reach tolerance."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"kernel iteration did not converge: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class GridTooCoarse(BackstepError):
    """Characteristic slopes too steep to resolve on the requested grid."""

    def __init__(self, substeps: int, cap: int):
        self.substeps = substeps
        self.cap = cap
        super().__init__(
            f"characteristic tracing would need {substeps} sub-steps per cell "
            f"(cap {cap}); refine the grid or rescale the diffusivities"
        )


class StructureViolation(BackstepError):
    """K(x,0) has nonzero entries where the coupling structure forbids them."""

    def __init__(self, i: int, j: int, value: float):
        self.i = i
        self.j = j
        self.value = value
        super().__init__(
            f"|K_{i + 1}{j + 1}(x,0)| = {value:.3e} exceeds tolerance for i <= j"
        )


class GridMismatch(BackstepError):
    pass


class IncompatibleInitialCondition(BackstepError):
    pass


class SingularStepMatrix(BackstepError):
    def __init__(self, dt: float, m: int):
        self.dt = dt
        self.m = m
        super().__init__(f"implicit step matrix is singular (dt={dt:.3e}, m={m})")


class NonFiniteState(BackstepError):
    def __init__(self, time: float):
        self.time = time
        super().__init__(f"state overflowed to non-finite values at t = {time:.6g}")


class InsufficientSnapshots(BackstepError):
    pass


class MissingBound(BackstepError):
    pass


class NonPositiveR(BackstepError):
    """R(Q) came out non positive definite; internal consistency failure."""

    def __init__(self, q, min_eig: float):
        self.q = q
        self.min_eig = min_eig
        super().__init__(
            f"R(Q) has minimum eigenvalue {min_eig:.3e} <= 0 for Q = {list(q)}"
        )


class NonPositiveSeries(BackstepError):
    pass


class ScenarioError(BackstepError):
    """Scenario file cannot be parsed or fails validation.

    ``field`` cites the offending entry (dotted path); ``line`` is the source
    line when the YAML parser provides one.
    """

    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class HashMismatch(BackstepError):
    """Kernel artifacts were produced from a different scenario."""
