"""JIT shim: numba-compiled hot loops with a plain-Python fallback.

The characteristic sweeps in ``_kernels`` are decorated with :func:`njit`.
By default that is numba's ``njit(cache=True)``.  Setting the environment
variable ``BACKSTEP_NUMBA=0`` (before import) replaces the decorator with a
no-op, so the same code runs as ordinary NumPy/Python.  The fallback is slow
but produces the same results; ``benchmarks/bench_kernel.py`` compares the
two paths.
"""

import os

_DISABLED_VALUES = ("0", "false", "no", "off")

NUMBA_ENABLED = os.environ.get("BACKSTEP_NUMBA", "1").lower() not in _DISABLED_VALUES

if NUMBA_ENABLED:
    try:
        import numba

        def njit(func):
            return numba.njit(func, cache=True)

    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(func):
        return func


def backend() -> str:
    """Identifier of the active execution path, recorded in solver metadata."""
    return "numba" if NUMBA_ENABLED else "numpy"
