"""Kernel backend selection.

Hot loops in :mod:`fnhom.kernels` are compiled with numba when it is
importable. Set ``FNHOM_BACKEND=numpy`` to force the vectorised numpy
path (useful for debugging and for the benchmark comparison).
"""

import os

_requested = os.environ.get("FNHOM_BACKEND", "numba").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when active, identity decorator otherwise."""
    if USE_NUMBA:
        import numba

        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def set_threads(n):
    """Pin numba's worker pool (no-op for the numpy backend)."""
    if USE_NUMBA and n:
        import numba

        numba.set_num_threads(int(n))
