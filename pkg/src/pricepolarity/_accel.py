"""Kernel backend selection.

Hot loops live in ``@njit`` functions; every one of them has a pure-numpy
counterpart.  ``PRICEPOLARITY_BACKEND=numpy`` (or a missing numba install)
routes all public entry points to the numpy path.
"""
import os

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_requested = os.environ.get("PRICEPOLARITY_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"PRICEPOLARITY_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

USE_NUMBA = HAVE_NUMBA and _requested == "numba"


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator when numba is absent."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba_njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
