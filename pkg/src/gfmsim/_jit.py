"""Numba switch for the hot kernels.

Set ``GFMSIM_DISABLE_JIT=1`` before import to run every kernel as plain
Python/numpy. Both paths share one source so results agree to roundoff.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

ENABLE_JIT = numba is not None and os.environ.get("GFMSIM_DISABLE_JIT", "0") not in ("1", "true", "yes")
ENABLE_JIT_CACHE = os.environ.get("GFMSIM_JIT_CACHE", "1") not in ("0", "false", "no")


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` when enabled, else return it untouched."""
    if not ENABLE_JIT:
        return fn
    return numba.njit(cache=ENABLE_JIT_CACHE, fastmath=False)(fn)
