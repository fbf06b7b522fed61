"""Optional numba acceleration.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` when numba is importable and ``ATOMPOL_DISABLE_NUMBA`` is not
set.  Every kernel module also carries a vectorized numpy path; callers pick
between the two with :data:`USE_NUMBA`.
"""
import os

_disabled = os.environ.get("ATOMPOL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend():
    return "numba" if USE_NUMBA else "numpy"
