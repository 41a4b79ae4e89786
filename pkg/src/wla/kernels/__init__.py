"""Hot numeric kernels with two interchangeable backends.

Each kernel ships a plain-Python loop implementation (numba-compilable) and a
vectorized numpy implementation. When numba is importable and the env flag
``WLA_NUMBA`` is not ``0``, the loop implementation is jit-compiled and used;
otherwise the numpy path serves. ``benchmarks/bench_kernels.py`` times both.
"""

import os

USE_NUMBA = os.environ.get("WLA_NUMBA", "1") != "0"
NUMBA_AVAILABLE = False
if USE_NUMBA:
    try:
        import numba  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:
        USE_NUMBA = False


def jit(fn):
    """Compile fn with numba when the numba path is active, else return fn."""
    if USE_NUMBA and NUMBA_AVAILABLE:
        from numba import njit

        return njit(cache=True)(fn)
    return fn


from .assignment import solve_assignment, assignment_cost  # noqa: E402
from .rotscale import rotscale_fwd, rotscale_bwd  # noqa: E402
from .fused import (  # noqa: E402
    layernorm_fwd,
    layernorm_bwd,
    softmax_fwd,
    softmax_bwd,
    silu_fwd,
    silu_bwd,
)
from .raster import render_frame  # noqa: E402

__all__ = [
    "USE_NUMBA",
    "NUMBA_AVAILABLE",
    "jit",
    "solve_assignment",
    "assignment_cost",
    "rotscale_fwd",
    "rotscale_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "silu_fwd",
    "silu_bwd",
    "render_frame",
]
