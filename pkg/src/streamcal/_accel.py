"""Kernel backend selection.

Hot loops are written once as plain Python/numpy and compiled with numba
when the ``numba`` backend is active.  ``STREAMCAL_BACKEND=numpy`` (or a
missing numba install) selects the uncompiled path instead.
"""

import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

_VALID = ("numba", "numpy")
_backend = os.environ.get("STREAMCAL_BACKEND", "numba").strip().lower()
if _backend not in _VALID:
    raise ValueError(f"STREAMCAL_BACKEND must be one of {_VALID}, got {_backend!r}")
if _backend == "numba" and not NUMBA_AVAILABLE:  # pragma: no cover
    _backend = "numpy"


def backend():
    return _backend


def set_backend(name):
    """Switch the active backend at runtime (used by tests and benchmarks)."""
    global _backend
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _backend = name


def jit(func=None, *, fallback=None):
    """Return a dispatcher that calls the compiled loop or the numpy path.

    ``func`` is the loop kernel compiled by numba.  ``fallback`` is an
    optional vectorised numpy implementation with the same signature, used
    when the numpy backend is active; without one the loop kernel runs as
    plain Python.  Compilation is lazy so importing never pays for it.
    """
    if func is None:
        return lambda f: jit(f, fallback=fallback)
    compiled = None
    slow = fallback if fallback is not None else func

    def dispatch(*args):
        nonlocal compiled
        if _backend == "numba":
            if compiled is None:
                compiled = numba.njit(cache=True, nogil=True)(func)
            return compiled(*args)
        return slow(*args)

    dispatch.py_func = func
    dispatch.fallback = slow
    dispatch.__name__ = func.__name__
    dispatch.__doc__ = func.__doc__
    return dispatch
